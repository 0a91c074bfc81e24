use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Multi-scale single-image deblurring: data synthesis, training,
/// evaluation and inference.
///
/// Settings are layered: variant preset, then the `--config` TOML file,
/// then flags. The effective configuration is echoed to stderr.
/// Set MIMO_THREADS to bound the worker thread count.
#[derive(Debug, Parser)]
#[command(name = "mimo", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Average frame windows into blurry/sharp PNG pairs plus a manifest.
    Synthesize(SynthesizeArgs),
    /// Train on the pairs of a manifest.
    Train(TrainArgs),
    /// Score a checkpoint on a manifest (PSNR, SSIM, time per image).
    Eval(EvalArgs),
    /// Restore every PNG in a directory.
    Deblur(DeblurArgs),
    /// Print the parameter count of a configuration.
    Params(ParamsArgs),
    /// Compare every parameter gradient with finite differences in f64.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Ablation {
    /// Single-scale encoder input.
    Mise,
    /// Supervise the full-resolution output only.
    Mosd,
    /// Plain skip connections instead of fused encoder features.
    Aff,
    /// Drop the frequency loss term.
    Msfr,
}

#[derive(Clone, Debug, Default, Args)]
pub struct Common {
    /// TOML file with optional `variant`, `ensemble` and `[model]`,
    /// `[train]`, `[synthesize]`, `[gradcheck]` tables.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// mimo-unet, mimo-unet-plus or tiny (desk-scale, unpublished).
    #[arg(long, value_name = "NAME")]
    pub variant: Option<String>,
    /// Switch off a component; repeatable.
    #[arg(long, value_enum, value_name = "PART")]
    pub ablate: Vec<Ablation>,
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Manifest whose SEQ records supply the frames; without it,
    /// procedural moving scenes are rendered.
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    /// Number of procedural pairs.
    #[arg(long, value_name = "N")]
    pub count: Option<usize>,
    /// Side length of procedural frames.
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
    /// Frames averaged per blurry image (odd).
    #[arg(long, value_name = "M")]
    pub frames: Option<usize>,
    /// Procedural motion in pixels per frame.
    #[arg(long, value_name = "PX")]
    pub speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Receives the log, checkpoints and the effective configuration.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Resume from this checkpoint.
    #[arg(long, value_name = "PATH")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    pub epochs: Option<u64>,
    /// Weight of the frequency loss.
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
    #[arg(long, value_name = "X")]
    pub lr: Option<f64>,
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    #[arg(long, value_name = "PX")]
    pub patch_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    /// Average over the eight flips and rotations.
    #[arg(long)]
    pub ensemble: bool,
    /// Round restored images to 8 bits before scoring.
    #[arg(long)]
    pub quantize: bool,
    /// Directory for the report file.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DeblurArgs {
    #[command(flatten)]
    pub common: Common,
    /// Directory of PNG images.
    #[arg(long, value_name = "DIR")]
    pub input: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, value_name = "PATH")]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub ensemble: bool,
}

#[derive(Debug, Args)]
pub struct ParamsArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[command(flatten)]
    pub common: Common,
    /// Input side length (multiple of 4).
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
    /// Check every N-th scalar of each tensor.
    #[arg(long, value_name = "N")]
    pub stride: Option<usize>,
    #[arg(long, value_name = "X")]
    pub lambda: Option<f64>,
}
