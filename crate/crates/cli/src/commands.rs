use std::fs;
use std::path::{Path, PathBuf};

use mimo_core::checkpoint::Checkpoint;
use mimo_core::data::{decode_image, encode_image, load_manifest, synthetic, BlurPair, Manifest, ManifestEntry, Record, ValidationReport};
use mimo_core::eval::{config_hash, evaluate_dataset, infer, EvalOptions};
use mimo_core::gradcheck::gradcheck;
use mimo_core::model::count_params;
use mimo_core::train::{Trainer, CHECKPOINT_FILE, LOG_FILE};
use mimo_core::{MimoUNet, Variant};

use crate::args::{Ablation, DeblurArgs, EvalArgs, GradcheckArgs, ParamsArgs, SynthesizeArgs, TrainArgs};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const REPORT_FILE: &str = "eval_report.tsv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.tsv";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))
}

/// Missing inputs are reported as invalid arguments, not runtime failures.
fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::validation(format!("{}: no such file", path.display())))
    }
}

fn itemized(report: &ValidationReport) -> CliError {
    CliError::Validation(report.problems.iter().map(|p| format!("line {}: {}", p.line, p.message)).collect())
}

/// All pairs of a manifest; any bad record fails the command.
fn load_pairs(path: &Path) -> Result<Vec<BlurPair>> {
    require_file(path)?;
    let manifest = load_manifest(path)?;
    let (pairs, report) = manifest.load();
    if !report.is_ok() {
        return Err(itemized(&report));
    }
    if pairs.is_empty() {
        return Err(CliError::validation(format!("{}: no pairs", path.display())));
    }
    Ok(pairs.into_iter().map(|p| p.pair).collect())
}

/// Loads a checkpoint. An explicitly chosen configuration must match it;
/// otherwise the checkpoint's own configuration is adopted.
fn load_checkpoint(cfg: &mut RunConfig, path: &Path) -> Result<Checkpoint> {
    require_file(path)?;
    Ok(if cfg.model_given {
        Checkpoint::load_expecting(path, &cfg.model)?
    } else {
        let c = Checkpoint::load(path)?;
        cfg.model = c.config;
        if let Some(v) = Variant::ALL.into_iter().find(|v| v.config() == c.config) {
            cfg.variant = v;
        }
        c
    })
}

fn load_model(cfg: &mut RunConfig, path: &Path) -> Result<MimoUNet> {
    Ok(load_checkpoint(cfg, path)?.into_model()?)
}

pub fn synthesize(args: SynthesizeArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.common, Variant::MimoUNet)?;
    let s = &mut cfg.synthesize;
    s.count = args.count.unwrap_or(s.count);
    s.size = args.size.unwrap_or(s.size);
    s.frames = args.frames.unwrap_or(s.frames);
    s.speed = args.speed.unwrap_or(s.speed);
    cfg.validate()?;
    cfg.echo();
    let s = &cfg.synthesize;
    let pairs = match &args.manifest {
        Some(path) => load_pairs(path)?,
        None => synthetic::pairs(s.count, s.size, s.frames, s.speed, s.seed)?,
    };
    for sub in ["blurry", "sharp"] {
        create_dir(&args.out.join(sub))?;
    }
    let mut entries = Vec::with_capacity(pairs.len());
    for (i, pair) in pairs.iter().enumerate() {
        let name = format!("{i:04}.png");
        let (blurry, sharp) = (PathBuf::from("blurry").join(&name), PathBuf::from("sharp").join(&name));
        encode_image(&pair.blurry, &args.out.join(&blurry))?;
        encode_image(&pair.sharp, &args.out.join(&sharp))?;
        entries.push(ManifestEntry {
            line: i + 1,
            record: Record::Pair { blurry, sharp },
        });
    }
    let manifest = Manifest {
        root: args.out.clone(),
        split: None,
        entries,
    };
    let path = args.out.join(MANIFEST_FILE);
    fs::write(&path, manifest.render()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    println!("wrote {} pairs and {}", pairs.len(), path.display());
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.common, Variant::MimoUNet)?;
    let t = &mut cfg.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.lr0 = args.lr.unwrap_or(t.lr0);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.patch_size = args.patch_size.unwrap_or(t.patch_size);
    if let Some(lambda) = args.lambda {
        if !args.common.ablate.contains(&Ablation::Msfr) {
            t.lambda = lambda;
        }
    }
    cfg.validate()?;
    let pairs = load_pairs(&args.manifest)?;
    let mut trainer = match &args.checkpoint {
        Some(path) => Trainer::resume(load_checkpoint(&mut cfg, path)?, cfg.train.clone())?,
        None => Trainer::new(MimoUNet::with_seed(cfg.model, cfg.train.seed)?, cfg.train.clone())?,
    };
    cfg.echo();
    create_dir(&args.out)?;
    let path = args.out.join(CONFIG_FILE);
    fs::write(&path, cfg.to_toml()).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    eprintln!(
        "training {} ({} parameters) on {} pairs for {} steps",
        cfg.label(),
        trainer.model().num_params(),
        pairs.len(),
        cfg.train.total_steps(pairs.len())
    );
    let log = trainer.run(&pairs, Some(&args.out))?;
    match log.records.last() {
        Some(r) => println!(
            "step {} epoch {}: l_total {:.6} (l_cont {:.6}, l_msfr {:.6})",
            r.step, r.epoch, r.loss.l_total, r.loss.l_cont, r.loss.l_msfr
        ),
        None => println!("already trained for {} steps", trainer.step_count()),
    }
    println!("log {}, checkpoint {}", args.out.join(LOG_FILE).display(), args.out.join(CHECKPOINT_FILE).display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.common, Variant::MimoUNet)?;
    cfg.ensemble |= args.ensemble;
    cfg.validate()?;
    require_file(&args.manifest)?;
    let manifest = load_manifest(&args.manifest)?;
    let model = load_model(&mut cfg, &args.checkpoint)?;
    cfg.echo();
    let options = EvalOptions {
        ensemble: cfg.ensemble,
        quantize: args.quantize,
    };
    let report = evaluate_dataset(&model, &manifest, options, &cfg.label(), &config_hash(&cfg.model));
    print!("{}", report.to_tsv());
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        report.write(&dir.join(REPORT_FILE))?;
    }
    let failed: Vec<String> = report
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.id)))
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed))
    }
}

pub fn deblur(args: DeblurArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.common, Variant::MimoUNet)?;
    cfg.ensemble |= args.ensemble;
    cfg.validate()?;
    let model = load_model(&mut cfg, &args.checkpoint)?;
    cfg.echo();
    let mut inputs: Vec<PathBuf> = fs::read_dir(&args.input)
        .map_err(|e| CliError::validation(format!("{}: {e}", args.input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(CliError::validation(format!("{}: no PNG images", args.input.display())));
    }
    create_dir(&args.out)?;
    let mut failed = Vec::new();
    for path in &inputs {
        let name = path.file_name().expect("listed files have names");
        let result = decode_image(path)
            .and_then(|x| infer(&model, &x, cfg.ensemble))
            .and_then(|y| encode_image(&y, &args.out.join(name)));
        match result {
            Ok(()) => println!("{}", args.out.join(name).display()),
            Err(e) => failed.push(format!("{}: {e}", path.display())),
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(failed))
    }
}

pub fn params(args: ParamsArgs) -> Result<()> {
    let cfg = RunConfig::resolve(&args.common, Variant::MimoUNet)?;
    cfg.validate()?;
    let n = count_params(&cfg.model);
    println!("{}\t{n}\t{:.2} M", cfg.label(), n as f64 / 1e6);
    Ok(())
}

pub fn gradcheck_cmd(args: GradcheckArgs) -> Result<()> {
    let mut cfg = RunConfig::resolve(&args.common, Variant::Tiny)?;
    cfg.gradcheck.size = args.size.unwrap_or(cfg.gradcheck.size);
    cfg.gradcheck.stride = args.stride.unwrap_or(cfg.gradcheck.stride);
    if let Some(lambda) = args.lambda {
        if !args.common.ablate.contains(&Ablation::Msfr) {
            cfg.train.lambda = lambda;
        }
    }
    cfg.validate()?;
    cfg.echo();
    let opts = cfg.gradcheck_options();
    let report = gradcheck(&opts)?;
    for t in &report.tensors {
        println!("{}\t{}\t{:.3e}\t{}", t.name, t.checked, t.max_rel_error, t.one_sided);
    }
    let max = report.max_rel_error();
    println!(
        "max relative error {max:.3e} over {} scalars ({} measured one-sided) in {:.1} s",
        report.checked(),
        report.one_sided(),
        report.elapsed.as_secs_f64()
    );
    if max < opts.tolerance {
        Ok(())
    } else {
        let worst = report.worst().expect("at least one tensor");
        Err(CliError::Runtime(format!(
            "gradient check failed: {} analytic {:e} vs numeric {:e}",
            worst.name, worst.worst.0, worst.worst.1
        )))
    }
}
