//! Effective run configuration: variant preset, then the TOML file, then
//! flags.

use std::fs;

use mimo_core::gradcheck::GradcheckOptions;
use mimo_core::train::TrainConfig;
use mimo_core::{ModelConfig, Variant};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::args::{Ablation, Common};
use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesizeConfig {
    pub count: usize,
    pub size: usize,
    pub frames: usize,
    pub speed: f64,
    pub seed: u64,
}

impl Default for SynthesizeConfig {
    fn default() -> Self {
        Self {
            count: 4,
            size: 64,
            frames: 7,
            speed: 1.5,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub size: usize,
    pub stride: usize,
    pub step: f64,
    pub floor: f64,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        let d = GradcheckOptions::default();
        Self {
            size: d.size,
            stride: d.stride,
            step: d.step,
            floor: d.floor,
            tolerance: d.tolerance,
            seed: d.seed,
        }
    }
}

#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    variant: Option<String>,
    ensemble: Option<bool>,
    model: toml::Table,
    train: toml::Table,
    synthesize: toml::Table,
    gradcheck: toml::Table,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub variant: Variant,
    pub ensemble: bool,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub synthesize: SynthesizeConfig,
    pub gradcheck: GradcheckConfig,
    /// Whether the model came from anything other than the fallback preset.
    #[serde(skip)]
    pub model_given: bool,
}

/// Replaces the fields of `base` named in `patch`; unknown names fail.
fn overlay<T: Serialize + DeserializeOwned>(base: &T, patch: &toml::Table, section: &str) -> Result<T> {
    let mut table = toml::Table::try_from(base).map_err(|e| CliError::Runtime(e.to_string()))?;
    table.extend(patch.clone());
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| CliError::validation(format!("config [{section}]: {e}")))
}

impl RunConfig {
    pub fn resolve(common: &Common, fallback: Variant) -> Result<Self> {
        let file: FileConfig = match &common.config {
            None => FileConfig::default(),
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
                toml::from_str(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?
            }
        };
        let name = common.variant.as_deref().or(file.variant.as_deref());
        let variant = match name {
            Some(n) => n.parse::<Variant>()?,
            None => fallback,
        };
        let mut model = overlay(&variant.config(), &file.model, "model")?;
        let mut train = overlay(&TrainConfig::default(), &file.train, "train")?;
        let mut synthesize = overlay(&SynthesizeConfig::default(), &file.synthesize, "synthesize")?;
        let mut gradcheck = overlay(&GradcheckConfig::default(), &file.gradcheck, "gradcheck")?;
        if let Some(seed) = common.seed {
            train.seed = seed;
            synthesize.seed = seed;
            gradcheck.seed = seed;
        }
        for a in &common.ablate {
            match a {
                Ablation::Mise => model.enable_mise = false,
                Ablation::Mosd => model.enable_mosd = false,
                Ablation::Aff => model.enable_aff = false,
                Ablation::Msfr => train.lambda = 0.0,
            }
        }
        Ok(Self {
            variant,
            ensemble: file.ensemble.unwrap_or(false),
            model_given: name.is_some() || !file.model.is_empty() || !common.ablate.is_empty(),
            model,
            train,
            synthesize,
            gradcheck,
        })
    }

    /// Checks every section, collecting all problems.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if let Err(e) = self.model.validate() {
            problems.push(format!("[model] {e}"));
        }
        if let Err(e) = self.train.validate() {
            problems.push(format!("[train] {e}"));
        }
        let s = &self.synthesize;
        if s.frames == 0 || s.frames % 2 == 0 {
            problems.push(format!("[synthesize] frames must be odd, got {}", s.frames));
        }
        if s.size == 0 || s.count == 0 {
            problems.push("[synthesize] size and count must be positive".into());
        }
        let g = &self.gradcheck;
        if g.size == 0 || g.size % 4 != 0 {
            problems.push(format!("[gradcheck] size must be a positive multiple of 4, got {}", g.size));
        }
        if g.stride == 0 || !(g.step > 0.0) || !(g.floor > 0.0) || !(g.tolerance > 0.0) {
            problems.push("[gradcheck] stride, step, floor and tolerance must be positive".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(problems))
        }
    }

    pub fn label(&self) -> String {
        if self.model == self.variant.config() {
            self.variant.tag(self.ensemble)
        } else {
            format!("{} (modified)", self.variant.tag(self.ensemble))
        }
    }

    pub fn gradcheck_options(&self) -> GradcheckOptions {
        let g = &self.gradcheck;
        GradcheckOptions {
            config: self.model,
            size: g.size,
            lambda: self.train.lambda,
            step: g.step,
            floor: g.floor,
            tolerance: g.tolerance,
            stride: g.stride,
            seed: g.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    pub fn echo(&self) {
        eprintln!("# effective configuration\n{}", self.to_toml());
    }
}
