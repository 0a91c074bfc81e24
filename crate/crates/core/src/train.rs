//! Training loop: random patches, multi-scale loss, Adam with a step
//! learning-rate schedule, per-step log and periodic checkpoints.
//!
//! An epoch is `max(1, corpus / batch_size)` steps; every sample draws its
//! pair index, crop and flip from its own stream of a generator seeded by
//! `seed`, indexed by global sample number. A run resumed from step `s`
//! therefore sees exactly the batches an uninterrupted run would.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use mimo_tensor::{Adam, AdamConfig, Graph, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::data::{collate, sample_patch, BlurPair};
use crate::losses::{total_loss, LossReport, DEFAULT_LAMBDA};
use crate::model::MimoUNet;
use crate::{CoreError, Result};

pub const LOG_FILE: &str = "train_log.tsv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: u64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub flip_prob: f64,
    pub lr0: f64,
    pub lr_decay_every: u64,
    pub lr_decay_factor: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Epochs between checkpoints; the final state is always saved.
    /// Zero disables intermediate checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3000,
            batch_size: 4,
            patch_size: 256,
            flip_prob: 0.5,
            lr0: 1e-4,
            lr_decay_every: 500,
            lr_decay_factor: 0.5,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            checkpoint_every: 100,
        }
    }
}

impl TrainConfig {
    /// Shorter schedule for real-blur corpora: 1000 epochs, halving every 200.
    pub fn realblur() -> Self {
        Self {
            epochs: 1000,
            lr_decay_every: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(CoreError::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return fail(format!("lr0 must be positive, got {}", self.lr0));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor <= 1.0) {
            return fail(format!("lr_decay_factor must lie in (0, 1], got {}", self.lr_decay_factor));
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.patch_size == 0 || self.patch_size % 4 != 0 {
            return fail(format!("patch_size must be a positive multiple of 4, got {}", self.patch_size));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return fail(format!("flip_prob must lie in [0, 1], got {}", self.flip_prob));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain struct serializes")
    }

    pub fn steps_per_epoch(&self, corpus: usize) -> u64 {
        ((corpus / self.batch_size) as u64).max(1)
    }

    pub fn total_steps(&self, corpus: usize) -> u64 {
        self.epochs * self.steps_per_epoch(corpus)
    }
}

/// `lr0 * factor^floor(epoch / decay_every)`.
pub fn lr_at_epoch(epoch: u64, config: &TrainConfig) -> f64 {
    let drops = epoch / config.lr_decay_every.max(1);
    config.lr0 * config.lr_decay_factor.powi(drops.min(i32::MAX as u64) as i32)
}

/// One logged step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub loss: LossReport,
    /// Seconds since the run (or resumed run) started.
    pub wall_time: f64,
}

impl StepRecord {
    pub const HEADER: &'static str = "step\tepoch\tlr\tl_cont\tl_msfr\tl_total\twall_time";

    /// Equal in every logged column except wall time.
    pub fn same_values(&self, other: &Self) -> bool {
        let key = |r: &Self| (r.step, r.epoch, r.lr, r.loss.l_cont, r.loss.l_msfr, r.loss.l_total);
        key(self) == key(other)
    }
}

impl fmt::Display for StepRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // `{:?}` on floats prints the shortest representation that parses back exactly
        write!(
            f,
            "{}\t{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:.3}",
            self.step, self.epoch, self.lr, self.loss.l_cont, self.loss.l_msfr, self.loss.l_total, self.wall_time
        )
    }
}

impl FromStr for StepRecord {
    type Err = CoreError;

    fn from_str(line: &str) -> Result<Self> {
        let bad = || CoreError::Input(format!("malformed log line {line:?}"));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 7 {
            return Err(bad());
        }
        let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad());
        // the weight is not logged; recover it from the losses
        let lambda = if num(3)? == num(5)? { 0.0 } else { (num(5)? - num(3)?) / num(4)? };
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            epoch: f[1].parse().map_err(|_| bad())?,
            lr: num(2)?,
            loss: LossReport {
                l_cont: num(3)?,
                l_msfr: num(4)?,
                l_total: num(5)?,
                lambda,
            },
            wall_time: num(6)?,
        })
    }
}

/// Step records of a run, in order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<StepRecord>,
}

impl TrainLog {
    pub fn to_tsv(&self) -> String {
        let mut s = format!("{}\n", StepRecord::HEADER);
        for r in &self.records {
            s.push_str(&format!("{r}\n"));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some(StepRecord::HEADER) {
            return Err(CoreError::Input("training log lacks its header row".into()));
        }
        Ok(Self {
            records: lines.filter(|l| !l.is_empty()).map(str::parse).collect::<Result<_>>()?,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?)
    }

    /// Same steps, schedule and losses; wall-clock times may differ.
    pub fn same_trajectory(&self, other: &Self) -> bool {
        self.records.len() == other.records.len()
            && self.records.iter().zip(&other.records).all(|(a, b)| a.same_values(b))
    }
}

/// Model plus optimizer state and the schedule that drives them.
pub struct Trainer {
    model: MimoUNet,
    adam: Adam,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(model: MimoUNet, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = Adam::new(model.params(), AdamConfig::default());
        Ok(Self { model, adam, config })
    }

    /// Continues from a checkpoint; without optimizer state the moments
    /// start from zero at step 0.
    pub fn resume(checkpoint: Checkpoint, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = checkpoint.optimizer.clone();
        let model = checkpoint.into_model()?;
        let adam = optimizer.unwrap_or_else(|| Adam::new(model.params(), AdamConfig::default()));
        Ok(Self { model, adam, config })
    }

    pub fn model(&self) -> &MimoUNet {
        &self.model
    }

    pub fn into_model(self) -> MimoUNet {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Steps completed so far.
    pub fn step_count(&self) -> u64 {
        self.adam.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, Some(&self.adam))
    }

    fn batch(&self, pairs: &[BlurPair], step: u64) -> Result<(Vec<mimo_tensor::Tensor>, Vec<mimo_tensor::Tensor>)> {
        let b = self.config.batch_size as u64;
        let samples = (0..b)
            .map(|j| {
                let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
                rng.set_stream(step * b + j);
                let pair = &pairs[rng.gen_range(0..pairs.len())];
                sample_patch(pair, self.config.patch_size, self.config.flip_prob, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;
        collate(&samples)
    }

    /// Runs one optimization step on a freshly sampled batch.
    pub fn step(&mut self, pairs: &[BlurPair], started: Instant) -> Result<StepRecord> {
        if pairs.is_empty() {
            return Err(CoreError::Input("training needs at least one pair".into()));
        }
        let step = self.adam.step;
        let epoch = step / self.config.steps_per_epoch(pairs.len());
        let lr = lr_at_epoch(epoch, &self.config);
        let (blurry, sharp) = self.batch(pairs, step)?;

        let mut g = Graph::new();
        let b1 = g.input(blurry[0].clone());
        let out = self.model.forward(&mut g, b1)?;
        let targets: Vec<Var> = sharp[..out.restored.len()].iter().map(|t| g.input(t.clone())).collect();
        let (vars, loss) = total_loss(&mut g, &out.restored, &targets, self.config.lambda)?;
        if !loss.is_finite() {
            return Err(CoreError::NonFiniteLoss {
                step,
                lr,
                summary: param_summary(&self.model),
            });
        }
        self.model.params_mut().zero_grad();
        g.backward_into(vars.total, self.model.params_mut())?;
        drop(g);
        self.adam.update(self.model.params_mut(), lr)?;
        Ok(StepRecord {
            step,
            epoch,
            lr,
            loss,
            wall_time: started.elapsed().as_secs_f64(),
        })
    }

    /// Trains until the configured number of epochs is complete. With an
    /// output directory, appends every step to its log file, saves a
    /// checkpoint every `checkpoint_every` epochs and at the end.
    pub fn run(&mut self, pairs: &[BlurPair], out_dir: Option<&Path>) -> Result<TrainLog> {
        let total = self.config.total_steps(pairs.len());
        self.run_until(pairs, total, out_dir)
    }

    /// Like [`run`](Self::run) but stops after step `end` (exclusive).
    pub fn run_until(&mut self, pairs: &[BlurPair], end: u64, out_dir: Option<&Path>) -> Result<TrainLog> {
        let started = Instant::now();
        let per_epoch = self.config.steps_per_epoch(pairs.len());
        let mut writer = out_dir.map(open_log).transpose()?;
        let mut log = TrainLog::default();
        while self.adam.step < end {
            let record = self.step(pairs, started)?;
            if let Some((w, path)) = writer.as_mut() {
                writeln!(w, "{record}").and_then(|_| w.flush()).map_err(|e| CoreError::io(&*path, e))?;
            }
            log.records.push(record);
            let done = self.adam.step;
            let every = self.config.checkpoint_every;
            if let Some(dir) = out_dir {
                if every > 0 && done % per_epoch == 0 && (done / per_epoch) % every == 0 && done < end {
                    self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
                }
            }
        }
        if let Some(dir) = out_dir {
            self.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
        }
        Ok(log)
    }
}

fn open_log(dir: &Path) -> Result<(BufWriter<File>, std::path::PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
    let path = dir.join(LOG_FILE);
    let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| CoreError::io(&path, e))?;
    let mut w = BufWriter::new(file);
    if fresh {
        writeln!(w, "{}", StepRecord::HEADER).map_err(|e| CoreError::io(&path, e))?;
    }
    Ok((w, path))
}

/// Global L2 norm, largest tensor norm and non-finite tensor names.
fn param_summary(model: &MimoUNet) -> String {
    let mut total = 0f64;
    let mut largest = (0f64, String::new());
    let mut bad = Vec::new();
    for p in model.params().iter() {
        let sq: f64 = p.value.data().iter().map(|&v| f64::from(v) * f64::from(v)).sum();
        if !sq.is_finite() {
            bad.push(p.name.clone());
            continue;
        }
        total += sq;
        if sq.sqrt() > largest.0 {
            largest = (sq.sqrt(), p.name.clone());
        }
    }
    let mut s = format!("global L2 norm {:.4e}, largest {} ({:.4e})", total.sqrt(), largest.1, largest.0);
    if !bad.is_empty() {
        s.push_str(&format!(", non-finite: {}", bad.join(", ")));
    }
    s
}
