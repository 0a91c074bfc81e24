//! The multi-input multi-output U-Net.
//!
//! Level 1 works at full resolution, levels 2 and 3 at one half and one
//! quarter. Each level's decoder output feeds a linear head whose result is
//! added to that level's blurry input, so the network predicts residuals.

mod config;
mod layout;

use mimo_tensor::{Graph, ParamStore, Scalar, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{FusionMode, ModelConfig, Variant, LEVELS};
pub use layout::ParamSpec;

use layout::{Fusion, Layout, ResBlock};

use crate::{CoreError, Result};

/// Ordered parameter inventory for `config`, without allocating weights.
pub fn inventory(config: &ModelConfig) -> Vec<ParamSpec> {
    layout::build(config).1
}

/// Exact number of trainable scalars.
pub fn count_params(config: &ModelConfig) -> usize {
    inventory(config).iter().map(|p| p.shape.numel()).sum()
}

/// Forward-pass results, finest level first.
#[derive(Clone, Debug)]
pub struct Outputs {
    /// Restored images; one per level with multi-output supervision on,
    /// otherwise only the full-resolution one.
    pub restored: Vec<Var>,
    /// Blurry input pyramid `B_1, B_2, B_3`.
    pub pyramid: [Var; LEVELS],
}

#[derive(Clone, Debug)]
pub struct MimoUNet<T = f32> {
    config: ModelConfig,
    layout: Layout,
    params: ParamStore<T>,
}

impl<T: Scalar> MimoUNet<T> {
    /// Random initialization: zero-mean normal weights with standard
    /// deviation `1 / sqrt(3 * fan_in)`, zero biases.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout::build(&config);
        let mut params = ParamStore::new();
        for spec in specs {
            let value = if spec.fan_in == 0 {
                Tensor::zeros(spec.shape)
            } else {
                Tensor::randn(spec.shape, 1.0 / (3.0 * spec.fan_in as f64).sqrt(), rng)
            };
            params.add(spec.name, value);
        }
        Ok(Self { config, layout, params })
    }

    pub fn with_seed(config: ModelConfig, seed: u64) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    /// Every weight and bias zero; the forward pass is then the identity on
    /// each pyramid level.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout::build(&config);
        let mut params = ParamStore::new();
        for spec in specs {
            params.add(spec.name, Tensor::zeros(spec.shape));
        }
        Ok(Self { config, layout, params })
    }

    /// Adopts an existing parameter store after checking it against the
    /// inventory of `config` name by name and shape by shape.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let (layout, specs) = layout::build(&config);
        if params.len() != specs.len() {
            return Err(CoreError::Config(format!(
                "expected {} parameter tensors for this configuration, found {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(params.iter()) {
            if spec.name != p.name {
                return Err(CoreError::Config(format!("expected parameter {}, found {}", spec.name, p.name)));
            }
            if spec.shape != p.value.shape() {
                return Err(CoreError::Config(format!(
                    "parameter {} has shape {}, expected {}",
                    p.name,
                    p.value.shape(),
                    spec.shape
                )));
            }
        }
        Ok(Self { config, layout, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    /// Same network in another precision.
    pub fn cast<U: Scalar>(&self) -> MimoUNet<U> {
        MimoUNet {
            config: self.config,
            layout: self.layout.clone(),
            params: self.params.cast(),
        }
    }

    fn res_stack(&self, g: &mut Graph<T>, blocks: &[ResBlock], mut x: Var) -> Result<Var> {
        for block in blocks {
            let h = block.conv1.apply_relu(g, &self.params, x)?;
            let h = block.conv2.apply(g, &self.params, h)?;
            x = g.add(x, h)?;
        }
        Ok(x)
    }

    fn check_level(level: usize, allowed: std::ops::RangeInclusive<usize>, what: &str) -> Result<()> {
        if allowed.contains(&level) {
            Ok(())
        } else {
            Err(CoreError::Usage(format!(
                "{what} exists at levels {}..={}, not {level}",
                allowed.start(),
                allowed.end()
            )))
        }
    }

    /// Shallow features of the downsampled blurry image `b` at level 2 or 3.
    pub fn scm(&self, g: &mut Graph<T>, level: usize, b: Var) -> Result<Var> {
        Self::check_level(level, 2..=3, "the shallow convolutional module")?;
        let scm = self.layout.scm.as_ref().ok_or_else(|| {
            CoreError::Usage("multi-scale input is disabled; there is no shallow module".into())
        })?[level - 2];
        let c = g.shape(b).c;
        if c != 3 {
            return Err(CoreError::Config(format!("shallow module expects 3 input channels, got {c}")));
        }
        let mut x = b;
        for conv in &scm.stem {
            x = conv.apply_relu(g, &self.params, x)?;
        }
        let x = g.concat_channels(x, b)?;
        scm.out.apply(g, &self.params, x)
    }

    /// Merges strided encoder features with shallow features according to
    /// the configured fusion mode.
    pub fn fuse(&self, g: &mut Graph<T>, level: usize, eb_down: Var, scm_out: Var) -> Result<Var> {
        Self::check_level(level, 2..=3, "feature fusion")?;
        let fusion = self.layout.fusion.as_ref().ok_or_else(|| {
            CoreError::Usage("multi-scale input is disabled; there is no fusion module".into())
        })?[level - 2];
        let (a, b) = (g.shape(eb_down), g.shape(scm_out));
        if a != b {
            return Err(CoreError::Config(format!("cannot fuse {a} with {b}")));
        }
        match fusion {
            Fusion::Fam(conv) => {
                let prod = g.mul(eb_down, scm_out)?;
                let refined = conv.apply(g, &self.params, prod)?;
                Ok(g.add(eb_down, refined)?)
            }
            Fusion::Concat(conv) => {
                let cat = g.concat_channels(eb_down, scm_out)?;
                conv.apply(g, &self.params, cat)
            }
            Fusion::Sum => Ok(g.add(eb_down, scm_out)?),
        }
    }

    /// Encoder block. Level 1 takes the blurry image; levels 2 and 3 take
    /// the (possibly fused) strided features of the level above.
    pub fn encoder_block(&self, g: &mut Graph<T>, level: usize, input: Var) -> Result<Var> {
        Self::check_level(level, 1..=3, "an encoder block")?;
        let x = if level == 1 {
            self.layout.eb_in.apply_relu(g, &self.params, input)?
        } else {
            input
        };
        self.res_stack(g, &self.layout.encoders[level - 1], x)
    }

    /// Strided 3x3 convolution from encoder level `level - 1` to `level`.
    pub fn downsample(&self, g: &mut Graph<T>, level: usize, x: Var) -> Result<Var> {
        Self::check_level(level, 2..=3, "a down-convolution")?;
        self.layout.down[level - 2].apply_relu(g, &self.params, x)
    }

    /// Fuses all three encoder outputs, resized bilinearly to level `n`.
    pub fn aff(&self, g: &mut Graph<T>, n: usize, eb: [Var; LEVELS]) -> Result<Var> {
        Self::check_level(n, 1..=2, "asymmetric feature fusion")?;
        let aff = self
            .layout
            .aff
            .as_ref()
            .ok_or_else(|| CoreError::Usage("asymmetric feature fusion is disabled".into()))?[n - 1];
        let target = g.shape(eb[n - 1]);
        let mut cat: Option<Var> = None;
        for &e in &eb {
            let s = g.shape(e);
            let r = if (s.h, s.w) == (target.h, target.w) {
                e
            } else {
                g.resize(e, target.h, target.w)?
            };
            cat = Some(match cat {
                None => r,
                Some(c) => g.concat_channels(c, r)?,
            });
        }
        let x = aff.squeeze.apply_relu(g, &self.params, cat.expect("three inputs"))?;
        aff.conv.apply(g, &self.params, x)
    }

    /// Decoder block at level `n`. Level 3 reads its skip input directly;
    /// levels 1 and 2 first merge it with the upsampled output of the level
    /// below.
    pub fn decoder_block(&self, g: &mut Graph<T>, n: usize, skip: Var, deeper: Option<Var>) -> Result<Var> {
        Self::check_level(n, 1..=3, "a decoder block")?;
        let x = match (n, deeper) {
            (3, None) => skip,
            (3, Some(_)) => return Err(CoreError::Usage("the coarsest decoder block has no deeper input".into())),
            (_, None) => return Err(CoreError::Usage(format!("decoder block {n} needs the output of level {}", n + 1))),
            (_, Some(d)) => {
                let up = self.layout.up[n - 1].apply_relu(g, &self.params, d)?;
                let cat = g.concat_channels(skip, up)?;
                self.layout.merge[n - 1].apply_relu(g, &self.params, cat)?
            }
        };
        self.res_stack(g, &self.layout.decoders[n - 1], x)
    }

    /// Output head at level `n`: a linear 3x3 convolution to RGB plus the
    /// blurry input of that level.
    pub fn head(&self, g: &mut Graph<T>, n: usize, features: Var, b: Var) -> Result<Var> {
        Self::check_level(n, 1..=3, "an output head")?;
        let conv = self.layout.heads[n - 1]
            .ok_or_else(|| CoreError::Usage(format!("level {n} has no output head with multi-output supervision off")))?;
        let r = conv.apply(g, &self.params, features)?;
        Ok(g.add(r, b)?)
    }

    /// Builds `B_2`, `B_3` from `b1` by successive bilinear halving.
    pub fn input_pyramid(&self, g: &mut Graph<T>, b1: Var) -> Result<[Var; LEVELS]> {
        let s = g.shape(b1);
        if s.c != 3 {
            return Err(CoreError::Input(format!("expected an RGB batch, got {s}")));
        }
        if s.h % 4 != 0 || s.w % 4 != 0 || s.h == 0 || s.w == 0 {
            return Err(CoreError::Input(format!(
                "spatial size {}x{} must be a positive multiple of 4; pad the input first",
                s.h, s.w
            )));
        }
        let b2 = g.resize(b1, s.h / 2, s.w / 2)?;
        let b3 = g.resize(b2, s.h / 4, s.w / 4)?;
        Ok([b1, b2, b3])
    }

    /// Encoder path. The coarse pyramid levels are only read when
    /// multi-scale input is enabled.
    pub fn encode(&self, g: &mut Graph<T>, pyramid: [Var; LEVELS]) -> Result<[Var; LEVELS]> {
        let eb1 = self.encoder_block(g, 1, pyramid[0])?;
        let mut eb = [eb1; LEVELS];
        for level in 2..=LEVELS {
            let d = self.downsample(g, level, eb[level - 2])?;
            let x = if self.config.enable_mise {
                let s = self.scm(g, level, pyramid[level - 1])?;
                self.fuse(g, level, d, s)?
            } else {
                d
            };
            eb[level - 1] = self.encoder_block(g, level, x)?;
        }
        Ok(eb)
    }

    /// Decoder path; returns restored images finest first.
    pub fn decode(&self, g: &mut Graph<T>, eb: [Var; LEVELS], pyramid: [Var; LEVELS]) -> Result<Vec<Var>> {
        let mut restored = Vec::with_capacity(LEVELS);
        let mut deeper = None;
        for n in (1..=LEVELS).rev() {
            let skip = if n < LEVELS && self.config.enable_aff {
                self.aff(g, n, eb)?
            } else {
                eb[n - 1]
            };
            let db = self.decoder_block(g, n, skip, deeper)?;
            if self.layout.heads[n - 1].is_some() {
                restored.push(self.head(g, n, db, pyramid[n - 1])?);
            }
            deeper = Some(db);
        }
        restored.reverse();
        Ok(restored)
    }

    /// Full forward pass from the full-resolution blurry batch.
    pub fn forward(&self, g: &mut Graph<T>, b1: Var) -> Result<Outputs> {
        let pyramid = self.input_pyramid(g, b1)?;
        let eb = self.encode(g, pyramid)?;
        let restored = self.decode(g, eb, pyramid)?;
        Ok(Outputs { restored, pyramid })
    }

    /// Inference without gradient bookkeeping; returns every restored level.
    pub fn predict(&self, b1: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        let mut g = Graph::new();
        let x = g.input(b1.clone());
        let out = self.forward(&mut g, x)?;
        Ok(out.restored.iter().map(|&v| g.value(v).clone()).collect())
    }

    /// Full-resolution restoration only.
    pub fn restore(&self, b1: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.predict(b1)?.swap_remove(0))
    }
}

#[cfg(test)]
mod tests;
