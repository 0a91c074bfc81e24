//! Image quality metrics, padded and self-ensembled inference, and
//! dataset evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use mimo_tensor::transform::Dihedral;
use mimo_tensor::Tensor;
use sha2::{Digest, Sha256};

use crate::data::{from_rgb8, to_rgb8, Manifest};
use crate::model::{MimoUNet, ModelConfig};
use crate::{CoreError, Result};

fn check_same(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(CoreError::Usage(format!("{what} of {} against {}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(CoreError::Usage(format!("{what} of empty images")));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over all channels jointly. Identical
/// images give `f64::INFINITY`.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_same(a, b, "PSNR")?;
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    let mse = se / a.len() as f64;
    Ok(if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let mut taps = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    for (i, t) in taps.iter_mut().enumerate() {
        *t = (-(i as f64 - mid).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = taps.iter().sum();
    taps.map(|t| t / sum)
}

/// Valid-region separable filtering of one plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Structural similarity with an 11x11 Gaussian window (sigma 1.5),
/// averaged over valid window positions, then over channels and batch.
pub fn ssim(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_same(a, b, "SSIM")?;
    let s = a.shape();
    if s.h < SSIM_WINDOW || s.w < SSIM_WINDOW {
        return Err(CoreError::Usage(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            s.h, s.w
        )));
    }
    let taps = gaussian_taps();
    let (c1, c2) = ((0.01 * peak).powi(2), (0.03 * peak).powi(2));
    let mut total = 0.0;
    for n in 0..s.n {
        for c in 0..s.c {
            let x: Vec<f64> = a.plane(n, c).iter().map(|&v| f64::from(v)).collect();
            let y: Vec<f64> = b.plane(n, c).iter().map(|&v| f64::from(v)).collect();
            let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
            let f = |p: &[f64]| filter_valid(p, s.h, s.w, &taps);
            let (mx, my) = (f(&x), f(&y));
            let (sxx, syy, sxy) = (f(&prod(&x, &x)), f(&prod(&y, &y)), f(&prod(&x, &y)));
            let mut acc = 0.0;
            for i in 0..mx.len() {
                let (vx, vy, cov) = (sxx[i] - mx[i] * mx[i], syy[i] - my[i] * my[i], sxy[i] - mx[i] * my[i]);
                acc += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2))
                    / ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
            }
            total += acc / mx.len() as f64;
        }
    }
    Ok(total / (s.n * s.c) as f64)
}

/// Anything that maps a blurry `1 x 3 x H x W` image (H, W multiples of 4)
/// to a restored one of the same shape.
pub trait Restorer {
    fn restore(&self, blurry: &Tensor) -> Result<Tensor>;
}

impl Restorer for MimoUNet {
    fn restore(&self, blurry: &Tensor) -> Result<Tensor> {
        MimoUNet::restore(self, blurry)
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pads the bottom and right edges up to multiples of `multiple`.
pub fn pad_to_multiple(x: &Tensor, multiple: usize) -> Tensor {
    let s = x.shape();
    let (h, w) = (s.h.div_ceil(multiple) * multiple, s.w.div_ceil(multiple) * multiple);
    if (h, w) == (s.h, s.w) {
        return x.clone();
    }
    Tensor::from_fn(s.with_spatial(h, w), |n, c, y, xx| {
        x.at(n, c, reflect(y as isize, s.h), reflect(xx as isize, s.w))
    })
}

/// Runs the model on all eight flips and rotations of `x`, undoes each
/// transform and averages the results.
pub fn self_ensemble(model: &dyn Restorer, x: &Tensor) -> Result<Tensor> {
    let mut acc = vec![0f64; x.len()];
    for t in Dihedral::all() {
        let y = t.invert(&model.restore(&t.apply(x))?);
        if y.shape() != x.shape() {
            return Err(CoreError::Usage(format!("restorer changed {} into {}", x.shape(), y.shape())));
        }
        for (a, &v) in acc.iter_mut().zip(y.data()) {
            *a += f64::from(v);
        }
    }
    Ok(Tensor::from_vec(x.shape(), acc.into_iter().map(|a| (a / 8.0) as f32).collect())?)
}

/// Pads to a multiple of 4, restores (optionally with the self-ensemble)
/// and crops back to the input size.
pub fn infer(model: &dyn Restorer, x: &Tensor, ensemble: bool) -> Result<Tensor> {
    let s = x.shape();
    let padded = pad_to_multiple(x, 4);
    let y = if ensemble {
        self_ensemble(model, &padded)?
    } else {
        model.restore(&padded)?
    };
    if (s.h, s.w) == (padded.shape().h, padded.shape().w) {
        Ok(y)
    } else {
        Ok(y.crop(0, 0, s.h, s.w)?)
    }
}

/// Short stable digest of a model configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    let text = format!(
        "base={};blocks={};mise={};mosd={};aff={};fusion={}",
        config.base_channels, config.num_resblocks, config.enable_mise, config.enable_mosd, config.enable_aff, config.fusion
    );
    Sha256::digest(text.as_bytes()).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EvalOptions {
    pub ensemble: bool,
    /// Round the restored image to 8 bits before scoring.
    pub quantize: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub psnr: f64,
    pub ssim: f64,
    pub ms: f64,
    /// Why this image could not be scored.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub variant: String,
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn scored(&self) -> impl Iterator<Item = &EvalRow> {
        self.rows.iter().filter(|r| r.error.is_none())
    }

    fn mean(&self, f: impl Fn(&EvalRow) -> f64) -> f64 {
        let n = self.scored().count();
        if n == 0 {
            f64::NAN
        } else {
            self.scored().map(f).sum::<f64>() / n as f64
        }
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|r| r.ssim)
    }

    pub fn mean_ms(&self) -> f64 {
        self.mean(|r| r.ms)
    }

    pub fn infinite_psnr_count(&self) -> usize {
        self.scored().filter(|r| r.psnr == f64::INFINITY).count()
    }

    pub fn failures(&self) -> usize {
        self.rows.len() - self.scored().count()
    }

    /// Tab-separated rows followed by a `#`-prefixed summary block.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\tpsnr_db\tssim\tms\tstatus\n");
        for r in &self.rows {
            match &r.error {
                None => writeln!(s, "{}\t{}\t{:.6}\t{:.3}\tok", r.id, fmt_db(r.psnr), r.ssim, r.ms),
                Some(e) => writeln!(s, "{}\t-\t-\t-\tfailed: {}", r.id, e.replace(['\t', '\n'], " ")),
            }
            .expect("writing to a string");
        }
        let _ = writeln!(s, "# variant: {}", self.variant);
        let _ = writeln!(s, "# config_hash: {}", self.config_hash);
        let _ = writeln!(s, "# images: {}", self.rows.len());
        let _ = writeln!(s, "# failed: {}", self.failures());
        let _ = writeln!(s, "# mean_psnr_db: {}", fmt_db(self.mean_psnr()));
        let _ = writeln!(s, "# infinite_psnr: {}", self.infinite_psnr_count());
        let _ = writeln!(s, "# mean_ssim: {:.6}", self.mean_ssim());
        let _ = writeln!(s, "# mean_ms: {:.3}", self.mean_ms());
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| CoreError::io(path, e))
    }
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.4}")
    }
}

/// Scores one pair.
pub fn evaluate_pair(model: &dyn Restorer, blurry: &Tensor, sharp: &Tensor, options: EvalOptions) -> Result<(f64, f64, f64)> {
    let start = Instant::now();
    let mut restored = infer(model, blurry, options.ensemble)?;
    let ms = start.elapsed().as_secs_f64() * 1e3;
    if options.quantize {
        restored = from_rgb8(&to_rgb8(&restored)?);
    }
    Ok((psnr(&restored, sharp, 1.0)?, ssim(&restored, sharp, 1.0)?, ms))
}

/// Scores every pair of a manifest. Records that fail to load or restore
/// become failed rows; the run continues.
pub fn evaluate_dataset(
    model: &dyn Restorer,
    manifest: &Manifest,
    options: EvalOptions,
    variant: &str,
    config_hash: &str,
) -> EvalReport {
    let mut rows = Vec::new();
    for (entry, loaded) in manifest.load_each() {
        match loaded {
            Err(e) => rows.push(EvalRow {
                id: format!("line {}", entry.line),
                psnr: f64::NAN,
                ssim: f64::NAN,
                ms: f64::NAN,
                error: Some(e),
            }),
            Ok(pairs) => {
                for p in pairs {
                    let row = match evaluate_pair(model, &p.pair.blurry, &p.pair.sharp, options) {
                        Ok((psnr, ssim, ms)) => EvalRow {
                            id: p.id,
                            psnr,
                            ssim,
                            ms,
                            error: None,
                        },
                        Err(e) => EvalRow {
                            id: p.id,
                            psnr: f64::NAN,
                            ssim: f64::NAN,
                            ms: f64::NAN,
                            error: Some(e.to_string()),
                        },
                    };
                    rows.push(row);
                }
            }
        }
    }
    EvalReport {
        variant: variant.into(),
        config_hash: config_hash.into(),
        rows,
    }
}
