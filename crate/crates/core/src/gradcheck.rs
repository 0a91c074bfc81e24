//! Central finite-difference verification of every parameter gradient of
//! the full model under the total loss, in double precision.
//!
//! ReLU and L1 are piecewise smooth. When a central difference disagrees
//! with the analytic gradient, the scalar is re-measured with
//! Richardson-extrapolated one-sided differences on each side; a kink inside
//! the step can only spoil one of them. Such scalars are counted in the
//! report.

use std::time::{Duration, Instant};

use mimo_tensor::resize::downsample2;
use mimo_tensor::{Graph, ParamId, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::losses::{total_loss, DEFAULT_LAMBDA};
use crate::model::{MimoUNet, ModelConfig, Variant, LEVELS};
use crate::{CoreError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub config: ModelConfig,
    /// Side of the square input image; a multiple of 4.
    pub size: usize,
    pub lambda: f64,
    /// Finite-difference step.
    pub step: f64,
    /// Gradient magnitude below which errors are measured absolutely:
    /// relative error is `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
    /// Relative error above which one-sided estimates are also tried.
    pub tolerance: f64,
    /// Check every `stride`-th scalar of each tensor (1 checks all).
    pub stride: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            config: Variant::Tiny.config(),
            size: 16,
            lambda: DEFAULT_LAMBDA,
            step: 1e-5,
            floor: 1e-5,
            tolerance: 1e-4,
            stride: 1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Analytic and numeric gradient at the worst scalar.
    pub worst: (f64, f64),
    /// Scalars whose central difference straddled a kink.
    pub one_sided: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub elapsed: Duration,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.tensors.iter().map(|t| t.checked).sum()
    }

    pub fn one_sided(&self) -> usize {
        self.tensors.iter().map(|t| t.one_sided).sum()
    }

    pub fn worst(&self) -> Option<&TensorCheck> {
        self.tensors.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

struct Problem {
    model: MimoUNet<f64>,
    input: Tensor<f64>,
    targets: Vec<Tensor<f64>>,
    lambda: f64,
}

impl Problem {
    fn new(opts: &GradcheckOptions) -> Result<Self> {
        if opts.size == 0 || opts.size % 4 != 0 {
            return Err(CoreError::Config(format!("gradcheck size must be a positive multiple of 4, got {}", opts.size)));
        }
        if !(opts.step > 0.0) || opts.stride == 0 {
            return Err(CoreError::Config("gradcheck step and stride must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut model = MimoUNet::<f64>::new(opts.config, &mut rng)?;
        // nonzero biases so every bias path is exercised
        for p in model.params_mut().iter_mut() {
            if p.name.ends_with(".bias") {
                p.value = Tensor::randn(p.value.shape(), 0.05, &mut rng);
            }
        }
        let shape = [1, 3, opts.size, opts.size];
        let input = Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng);
        let mut targets = vec![Tensor::rand_uniform(shape, 0.0, 1.0, &mut rng)];
        for _ in 1..LEVELS {
            let next = downsample2(targets.last().expect("non-empty"))?;
            targets.push(next);
        }
        targets.truncate(opts.config.num_outputs());
        Ok(Self {
            model,
            input,
            targets,
            lambda: opts.lambda,
        })
    }

    fn graph(&self) -> Result<(Graph<f64>, mimo_tensor::Var)> {
        let mut g = Graph::new();
        let x = g.input(self.input.clone());
        let out = self.model.forward(&mut g, x)?;
        let t: Vec<_> = self.targets.iter().map(|t| g.input(t.clone())).collect();
        let (vars, _) = total_loss(&mut g, &out.restored, &t, self.lambda)?;
        Ok((g, vars.total))
    }

    fn loss(&self) -> Result<f64> {
        let (g, l) = self.graph()?;
        Ok(g.value(l).data()[0])
    }

    fn loss_with(&mut self, id: ParamId, i: usize, value: f64) -> Result<f64> {
        let original = self.model.params().value(id).data()[i];
        self.model.params_mut().get_mut(id).value.data_mut()[i] = value;
        let l = self.loss();
        self.model.params_mut().get_mut(id).value.data_mut()[i] = original;
        l
    }
}

/// Compares backpropagated gradients against central differences for the
/// selected scalars of every parameter tensor.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckReport> {
    let start = Instant::now();
    let mut problem = Problem::new(opts)?;
    let (g, loss) = problem.graph()?;
    g.backward_into(loss, problem.model.params_mut())?;
    drop(g);

    let base = problem.loss()?;
    let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(opts.floor);
    let h = opts.step;
    let ids: Vec<ParamId> = problem.model.params().ids().collect();
    let mut tensors = Vec::with_capacity(ids.len());
    for id in ids {
        let p = problem.model.params().get(id);
        let (name, analytic) = (p.name.clone(), p.grad.clone());
        let mut check = TensorCheck {
            name,
            checked: 0,
            max_rel_error: 0.0,
            worst: (0.0, 0.0),
            one_sided: 0,
        };
        for i in (0..analytic.len()).step_by(opts.stride) {
            let x = problem.model.params().value(id).data()[i];
            let a = analytic.data()[i];
            let plus = problem.loss_with(id, i, x + h)?;
            let minus = problem.loss_with(id, i, x - h)?;
            let mut numeric = (plus - minus) / (2.0 * h);
            if rel(a, numeric) > opts.tolerance {
                let half_plus = problem.loss_with(id, i, x + h / 2.0)?;
                let half_minus = problem.loss_with(id, i, x - h / 2.0)?;
                let right = (4.0 * (half_plus - base) - (plus - base)) / h;
                let left = (4.0 * (base - half_minus) - (base - minus)) / h;
                let best = if rel(a, right) <= rel(a, left) { right } else { left };
                if rel(a, best) < rel(a, numeric) {
                    numeric = best;
                    check.one_sided += 1;
                }
            }
            let e = rel(a, numeric);
            check.checked += 1;
            if e > check.max_rel_error || check.checked == 1 {
                check.max_rel_error = e;
                check.worst = (a, numeric);
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport {
        tensors,
        elapsed: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FusionMode;

    #[test]
    fn small_models_in_every_fusion_mode_pass() {
        for fusion in [FusionMode::Fam, FusionMode::Concat, FusionMode::Sum] {
            let opts = GradcheckOptions {
                config: ModelConfig { fusion, ..ModelConfig::new(2, 1) },
                size: 8,
                stride: 7,
                ..GradcheckOptions::default()
            };
            let r = gradcheck(&opts).unwrap();
            let worst = r.worst().unwrap();
            assert!(r.max_rel_error() < 1e-4, "{fusion}: {} {:?} -> {}", worst.name, worst.worst, worst.max_rel_error);
            assert_eq!(r.tensors.len(), r.tensors.iter().filter(|t| t.checked > 0).count());
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // a step this large straddles ReLU and L1 kinks everywhere
        let opts = GradcheckOptions {
            config: ModelConfig::new(1, 1),
            size: 8,
            step: 0.5,
            stride: 3,
            ..GradcheckOptions::default()
        };
        assert!(gradcheck(&opts).unwrap().max_rel_error() > 1e-3);
    }

    #[test]
    fn rejects_bad_options() {
        let bad = GradcheckOptions { size: 10, ..GradcheckOptions::default() };
        assert!(gradcheck(&bad).is_err());
    }
}
