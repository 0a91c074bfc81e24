use crate::{ParamStore, Result, Scalar, Tensor, TensorError};

/// Hyperparameters of [`Adam`] other than the learning rate, which is
/// supplied per step so a schedule can drive it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected first and second moments.
#[derive(Clone, Debug)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    /// Number of updates applied so far.
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    /// Zero moments shaped like the parameters of `store`.
    pub fn new(store: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<_> = store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            config,
            step: 0,
            first_moment: zeros.clone(),
            second_moment: zeros,
        }
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn update(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(TensorError::Config(format!("learning rate must be positive, got {lr}")));
        }
        if store.len() != self.first_moment.len() {
            return Err(TensorError::Config(format!(
                "optimizer tracks {} tensors but the store has {}",
                self.first_moment.len(),
                store.len()
            )));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
        let (b1, b2) = (T::from_real(beta1), T::from_real(beta2));
        let (one_b1, one_b2) = (T::from_real(1.0 - beta1), T::from_real(1.0 - beta2));
        let step_size = T::from_real(lr / bc1);
        let inv_sqrt_bc2 = T::from_real(1.0 / bc2.sqrt());
        let eps = T::from_real(eps);
        for ((p, m), v) in store.iter_mut().zip(&mut self.first_moment).zip(&mut self.second_moment) {
            if m.shape() != p.value.shape() {
                return Err(TensorError::ShapeMismatch {
                    op: "adam",
                    lhs: m.shape(),
                    rhs: p.value.shape(),
                });
            }
            let (w, g) = (p.value.data_mut(), p.grad.data());
            for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.data_mut()).zip(v.data_mut()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *w -= step_size * *m / (v.sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}
