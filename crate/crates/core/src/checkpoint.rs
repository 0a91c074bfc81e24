//! Binary checkpoints: model configuration, named parameters and optional
//! optimizer state.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! "MIMOUNET"  u32 version
//! u32 base_channels  u32 num_resblocks  u8 flags (1 mise, 2 mosd, 4 aff)  u8 fusion
//! u32 tensor count
//!   per tensor: u32 name length, name bytes, 4 x u32 dims, f32 payload
//! "ADAM"  u8 present
//!   if present: u64 step, f64 beta1, f64 beta2, f64 eps,
//!               first moments then second moments, f32 payloads in tensor order
//! ```

use std::fs;
use std::path::Path;

use mimo_tensor::{Adam, AdamConfig, ParamStore, Shape, Tensor};

use crate::model::{inventory, FusionMode, MimoUNet, ModelConfig};
use crate::{CoreError, Result};

const MAGIC: &[u8; 8] = b"MIMOUNET";
const ADAM_TAG: &[u8; 4] = b"ADAM";
pub const FORMAT_VERSION: u32 = 1;

/// Everything needed to rebuild a model and continue training it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub optimizer: Option<Adam>,
}

impl Checkpoint {
    pub fn from_model(model: &MimoUNet, optimizer: Option<&Adam>) -> Self {
        Self {
            config: *model.config(),
            params: model.params().clone(),
            optimizer: optimizer.cloned(),
        }
    }

    pub fn into_model(self) -> Result<MimoUNet> {
        MimoUNet::from_params(self.config, self.params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 4 * self.params.num_scalars() * if self.optimizer.is_some() { 3 } else { 1 });
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let c = &self.config;
        out.extend_from_slice(&(c.base_channels as u32).to_le_bytes());
        out.extend_from_slice(&(c.num_resblocks as u32).to_le_bytes());
        let flags = u8::from(c.enable_mise) | u8::from(c.enable_mosd) << 1 | u8::from(c.enable_aff) << 2;
        out.push(flags);
        out.push(c.fusion.code());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in self.params.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            for d in p.value.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            put_floats(&mut out, &p.value);
        }
        out.extend_from_slice(ADAM_TAG);
        match &self.optimizer {
            None => out.push(0),
            Some(adam) => {
                out.push(1);
                out.extend_from_slice(&adam.step.to_le_bytes());
                for v in [adam.config.beta1, adam.config.beta2, adam.config.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                for t in adam.first_moment.iter().chain(&adam.second_moment) {
                    put_floats(&mut out, t);
                }
            }
        }
        out
    }

    /// Parses and validates every tensor against the stored configuration.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(CoreError::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(CoreError::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let base_channels = r.u32("base_channels")? as usize;
        let num_resblocks = r.u32("num_resblocks")? as usize;
        let flags = r.u8("flags")?;
        if flags & !0b111 != 0 {
            return Err(CoreError::Checkpoint(format!("unknown flag bits {flags:#04x}")));
        }
        let fusion_code = r.u8("fusion mode")?;
        let fusion = FusionMode::from_code(fusion_code)
            .ok_or_else(|| CoreError::Checkpoint(format!("unknown fusion mode code {fusion_code}")))?;
        let config = ModelConfig {
            base_channels,
            num_resblocks,
            enable_mise: flags & 1 != 0,
            enable_mosd: flags & 2 != 0,
            enable_aff: flags & 4 != 0,
            fusion,
        };
        config.validate().map_err(|e| CoreError::Checkpoint(format!("stored configuration: {e}")))?;

        let specs = inventory(&config);
        let count = r.u32("tensor count")? as usize;
        if count != specs.len() {
            return Err(CoreError::Checkpoint(format!(
                "holds {count} tensors but its configuration needs {}",
                specs.len()
            )));
        }
        let mut params = ParamStore::new();
        for (i, spec) in specs.iter().enumerate() {
            let len = r.u32("name length")? as usize;
            let name = String::from_utf8(r.take(len, "tensor name")?.to_vec())
                .map_err(|_| CoreError::Checkpoint(format!("tensor {i} has a non-UTF-8 name")))?;
            if name != spec.name {
                return Err(CoreError::Checkpoint(format!(
                    "tensor {i} is named {name:?}, expected {:?}",
                    spec.name
                )));
            }
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = r.u32("dimensions")? as usize;
            }
            let shape = Shape::from(dims);
            if shape != spec.shape {
                return Err(CoreError::Checkpoint(format!(
                    "tensor {name} has shape {shape}, expected {}",
                    spec.shape
                )));
            }
            let value = r.tensor(shape, &name)?;
            params.add(name, value);
        }

        if r.take(4, "optimizer tag")? != ADAM_TAG {
            return Err(CoreError::Checkpoint("missing optimizer section".into()));
        }
        let optimizer = match r.u8("optimizer flag")? {
            0 => None,
            1 => {
                let step = r.u64("optimizer step")?;
                let config = AdamConfig {
                    beta1: r.f64("beta1")?,
                    beta2: r.f64("beta2")?,
                    eps: r.f64("eps")?,
                };
                let mut moments = Vec::with_capacity(2 * specs.len());
                for which in ["first moment", "second moment"] {
                    for spec in &specs {
                        moments.push(r.tensor(spec.shape, &format!("{which} of {}", spec.name))?);
                    }
                }
                let second_moment = moments.split_off(specs.len());
                Some(Adam {
                    config,
                    step,
                    first_moment: moments,
                    second_moment,
                })
            }
            other => return Err(CoreError::Checkpoint(format!("invalid optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(CoreError::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            config,
            params,
            optimizer,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| CoreError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            CoreError::Checkpoint(msg) => CoreError::Checkpoint(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Loads and rejects a checkpoint whose configuration differs from
    /// `expected`.
    pub fn load_expecting(path: &Path, expected: &ModelConfig) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.config != *expected {
            return Err(CoreError::Checkpoint(format!(
                "{} was written for {:?}, not {:?}",
                path.display(),
                ck.config,
                expected
            )));
        }
        Ok(ck)
    }
}

fn put_floats(out: &mut Vec<u8>, t: &Tensor) {
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CoreError::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("exact length"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array(what)?))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array(what)?))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array(what)?))
    }

    fn tensor(&mut self, shape: Shape, what: &str) -> Result<Tensor> {
        let raw = self.take(4 * shape.numel(), what)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        Ok(Tensor::from_vec(shape, data)?)
    }
}
