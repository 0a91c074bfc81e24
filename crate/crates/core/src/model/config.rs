use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{CoreError, Result};

/// Number of scales. The encoder/decoder topology is built for exactly three.
pub const LEVELS: usize = 3;

/// How strided encoder features are merged with shallow features of the
/// downsampled input at levels 2 and 3.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// `x + conv3x3(x ⊙ s)`
    #[default]
    Fam,
    /// `conv1x1(concat(x, s))`
    Concat,
    /// `x + s`
    Sum,
}

impl FusionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Fam => "fam",
            Self::Concat => "concat",
            Self::Sum => "sum",
        }
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Self::Fam => 0,
            Self::Concat => 1,
            Self::Sum => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        [Self::Fam, Self::Concat, Self::Sum].into_iter().find(|m| m.code() == code)
    }
}

impl FromStr for FusionMode {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fam" => Ok(Self::Fam),
            "concat" => Ok(Self::Concat),
            "sum" => Ok(Self::Sum),
            other => Err(CoreError::Config(format!(
                "unknown fusion mode {other:?} (expected fam, concat or sum)"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels at level 1; levels 2 and 3 use twice and four times this.
    pub base_channels: usize,
    /// Residual blocks in every encoder and decoder block.
    pub num_resblocks: usize,
    /// Multi-scale inputs into the encoder (shallow modules + fusion).
    pub enable_mise: bool,
    /// Supervised outputs at levels 2 and 3.
    pub enable_mosd: bool,
    /// Asymmetric fusion of all encoder outputs for each decoder level.
    pub enable_aff: bool,
    pub fusion: FusionMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Variant::MimoUNet.config()
    }
}

impl ModelConfig {
    pub fn new(base_channels: usize, num_resblocks: usize) -> Self {
        Self {
            base_channels,
            num_resblocks,
            enable_mise: true,
            enable_mosd: true,
            enable_aff: true,
            fusion: FusionMode::Fam,
        }
    }

    /// All three architectural toggles off: a plain U-Net with one output.
    pub fn baseline(self) -> Self {
        Self {
            enable_mise: false,
            enable_mosd: false,
            enable_aff: false,
            ..self
        }
    }

    /// Channel width at `level` (1-based).
    pub fn channels(&self, level: usize) -> usize {
        debug_assert!((1..=LEVELS).contains(&level));
        self.base_channels << (level - 1)
    }

    /// Number of supervised outputs.
    pub fn num_outputs(&self) -> usize {
        if self.enable_mosd {
            LEVELS
        } else {
            1
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 {
            return Err(CoreError::Config("base_channels must be at least 1".into()));
        }
        if self.num_resblocks == 0 {
            return Err(CoreError::Config("num_resblocks must be at least 1".into()));
        }
        Ok(())
    }
}

/// Named model presets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// 32 base channels, 8 residual blocks per block.
    MimoUNet,
    /// 32 base channels, 20 residual blocks; with self-ensemble inference
    /// this is the "++" configuration.
    MimoUNetPlus,
    /// 8 base channels, 2 residual blocks. A desk-scale preset for tests
    /// and smoke runs, not one of the published variants.
    Tiny,
}

impl Variant {
    pub const ALL: [Self; 3] = [Self::MimoUNet, Self::MimoUNetPlus, Self::Tiny];

    pub fn config(self) -> ModelConfig {
        match self {
            Self::MimoUNet => ModelConfig::new(32, 8),
            Self::MimoUNetPlus => ModelConfig::new(32, 20),
            Self::Tiny => ModelConfig::new(8, 2),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::MimoUNet => "mimo-unet",
            Self::MimoUNetPlus => "mimo-unet-plus",
            Self::Tiny => "tiny",
        }
    }

    /// Display tag, accounting for self-ensemble inference.
    pub fn tag(self, ensemble: bool) -> String {
        match (self, ensemble) {
            (Self::MimoUNetPlus, true) => "mimo-unet-plus-plus".into(),
            (Self::Tiny, e) => format!("tiny (desk-scale preset, not a published variant){}", if e { " + self-ensemble" } else { "" }),
            (v, true) => format!("{} + self-ensemble", v.name()),
            (v, false) => v.name().into(),
        }
    }
}

impl FromStr for Variant {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| CoreError::Config(format!("unknown variant {s:?} (expected mimo-unet, mimo-unet-plus or tiny)")))
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
