use std::collections::HashMap;

use crate::conv::{conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward};
use crate::fft::{fft2, fft2_adjoint};
use crate::resize::{bilinear, bilinear_backward};
use crate::{ParamId, ParamStore, Result, Scalar, Shape, Tensor, TensorError};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
    },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Concat(Var, Var),
    Resize(Var),
    FftReal(Var),
    FftImag(Var),
    L1Mean(Var, Var),
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of operations for one forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and `backward` walks it in reverse, visiting each node
/// once. A graph is meant to live for a single training step.
#[derive(Debug)]
pub struct Graph<T = f32> {
    nodes: Vec<Node<T>>,
    param_vars: HashMap<ParamId, Var>,
    bindings: Vec<(Var, ParamId)>,
}

/// Gradients of a scalar with respect to the leaves of a graph.
#[derive(Debug)]
pub struct Gradients<T = f32> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            bindings: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracks(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf whose gradient is reported by [`backward`](Self::backward).
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Binds parameter `id` of `store` as a gradient-tracked leaf. Repeated
    /// calls with the same id return the same variable.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), true);
        self.param_vars.insert(id, v);
        self.bindings.push((v, id));
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let rg = self.tracks(x) || self.tracks(w) || b.is_some_and(|b| self.tracks(b));
        Ok(self.push(value, Op::Conv2d { x, w, b, stride, padding }, rg))
    }

    /// Transposed convolution with a `[c_in, c_out, kh, kw]` weight that
    /// scales the spatial extent by exactly `stride`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let value = conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, padding)?;
        let rg = self.tracks(x) || self.tracks(w) || b.is_some_and(|b| self.tracks(b));
        Ok(self.push(value, Op::ConvTranspose2d { x, w, b, stride, padding }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).mul(self.value(b))?;
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        let rg = self.tracks(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.tracks(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).concat_channels(self.value(b))?;
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Bilinear resize of every plane to `h x w`.
    pub fn resize(&mut self, a: Var, h: usize, w: usize) -> Result<Var> {
        let value = bilinear(self.value(a), h, w)?;
        let rg = self.tracks(a);
        Ok(self.push(value, Op::Resize(a), rg))
    }

    /// Real and imaginary parts of the unnormalized per-plane 2-D DFT.
    pub fn fft2(&mut self, a: Var) -> (Var, Var) {
        let spectrum = fft2(self.value(a));
        let rg = self.tracks(a);
        let re = self.push(spectrum.real, Op::FftReal(a), rg);
        let im = self.push(spectrum.imag, Op::FftImag(a), rg);
        (re, im)
    }

    /// `sum |a - b| / numel(a)` as a 1x1x1x1 tensor.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        va.expect_same_shape(vb, "l1_mean")?;
        let total: T = va.data().iter().zip(vb.data()).map(|(&x, &y)| (x - y).abs()).sum();
        let value = Tensor::scalar(total / T::from_real(va.len() as f64));
        let rg = self.tracks(a) || self.tracks(b);
        Ok(self.push(value, Op::L1Mean(a, b), rg))
    }

    /// Sum of all entries as a 1x1x1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        let rg = self.tracks(a);
        self.push(value, Op::Sum(a), rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let shape = self.shape(loss);
        if shape.numel() != 1 {
            return Err(TensorError::Usage(format!(
                "backward needs a scalar loss, got shape {shape}"
            )));
        }
        self.backward_with_seed(loss, Tensor::full(shape, T::one()))
    }

    /// Reverse pass seeded with an arbitrary upstream gradient for `out`
    /// (a vector-Jacobian product).
    pub fn backward_with_seed(&self, out: Var, seed: Tensor<T>) -> Result<Gradients<T>> {
        self.value(out).expect_same_shape(&seed, "backward seed")?;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(&node.op, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Conv2d { x, w, b, stride, padding } => {
                let (dx, dw, db) = conv2d_backward(self.value(x), self.value(w), g, stride, padding)?;
                self.accumulate(grads, x, dx)?;
                self.accumulate(grads, w, dw)?;
                if let Some(b) = b {
                    self.accumulate(grads, b, db.reshape(self.shape(b))?)?;
                }
            }
            Op::ConvTranspose2d { x, w, b, stride, padding } => {
                let (dx, dw, db) = conv_transpose2d_backward(self.value(x), self.value(w), g, stride, padding)?;
                self.accumulate(grads, x, dx)?;
                self.accumulate(grads, w, dw)?;
                if let Some(b) = b {
                    self.accumulate(grads, b, db.reshape(self.shape(b))?)?;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone())?;
                self.accumulate(grads, b, g.clone())?;
            }
            Op::Mul(a, b) => {
                if self.tracks(a) {
                    self.accumulate(grads, a, g.mul(self.value(b))?)?;
                }
                if self.tracks(b) {
                    self.accumulate(grads, b, g.mul(self.value(a))?)?;
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s))?,
            Op::Relu(a) => {
                let da = g.zip_map(self.value(a), "relu_backward", |g, x| if x > T::zero() { g } else { T::zero() })?;
                self.accumulate(grads, a, da)?;
            }
            Op::Concat(a, b) => {
                let (da, db) = g.split_channels(self.shape(a).c)?;
                self.accumulate(grads, a, da)?;
                self.accumulate(grads, b, db)?;
            }
            Op::Resize(a) => {
                let s = self.shape(a);
                self.accumulate(grads, a, bilinear_backward(g, s.h, s.w)?)?;
            }
            Op::FftReal(a) => {
                let da = fft2_adjoint(g, &Tensor::zeros(g.shape()));
                self.accumulate(grads, a, da)?;
            }
            Op::FftImag(a) => {
                let da = fft2_adjoint(&Tensor::zeros(g.shape()), g);
                self.accumulate(grads, a, da)?;
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(a), self.value(b));
                let k = g.data()[0] / T::from_real(va.len() as f64);
                // subgradient with sign(0) = 0
                let da = va.zip_map(vb, "l1_backward", |x, y| {
                    let d = x - y;
                    if d > T::zero() {
                        k
                    } else if d < T::zero() {
                        -k
                    } else {
                        T::zero()
                    }
                })?;
                if self.tracks(b) {
                    self.accumulate(grads, b, da.scale(-T::one()))?;
                }
                self.accumulate(grads, a, da)?;
            }
            Op::Sum(a) => {
                let da = Tensor::full(self.shape(a), g.data()[0]);
                self.accumulate(grads, a, da)?;
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) -> Result<()> {
        if !self.tracks(v) {
            return Ok(());
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta)?,
            slot @ None => *slot = Some(delta),
        }
        Ok(())
    }

    /// Adds the gradients of every bound parameter into `store`.
    pub fn accumulate_param_grads(&self, grads: &Gradients<T>, store: &mut ParamStore<T>) -> Result<()> {
        for &(v, id) in &self.bindings {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g)?;
            }
        }
        Ok(())
    }

    /// `backward(loss)` followed by [`accumulate_param_grads`](Self::accumulate_param_grads).
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.backward(loss)?;
        self.accumulate_param_grads(&grads, store)
    }
}
