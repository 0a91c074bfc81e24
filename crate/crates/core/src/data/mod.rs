//! Training and evaluation data: blur synthesis by frame averaging, scale
//! pyramids, patch sampling, manifests and PNG I/O.

mod image_io;
mod manifest;
pub mod synthetic;

use mimo_tensor::resize::downsample2;
use mimo_tensor::transform::flip_horizontal;
use mimo_tensor::{Shape, Tensor};
use rand::Rng;

pub use image_io::{decode_image, encode_image, from_rgb8, to_rgb8};
pub use manifest::{load_manifest, LoadedPair, Manifest, ManifestEntry, Record, RecordProblem, Split, ValidationReport};

use crate::model::LEVELS;
use crate::{CoreError, Result};

/// Consecutive sharp frames of one scene, all of one resolution.
#[derive(Clone, Debug)]
pub struct FrameSequence {
    frames: Vec<Tensor>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Tensor>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| CoreError::Input("a frame sequence needs at least one frame".into()))?
            .shape();
        if first.n != 1 || first.c != 3 {
            return Err(CoreError::Input(format!("frames must be single RGB images, got {first}")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.shape() != first) {
            return Err(CoreError::Input(format!("frame {i} is {} but frame 0 is {first}", f.shape())));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Tensor] {
        &self.frames
    }

    pub fn shape(&self) -> Shape {
        self.frames[0].shape()
    }

    /// Consecutive non-overlapping sub-sequences of `m` frames.
    pub fn windows(&self, m: usize) -> impl Iterator<Item = FrameSequence> + '_ {
        self.frames.chunks_exact(m.max(1)).map(|c| FrameSequence { frames: c.to_vec() })
    }
}

/// An aligned blurry/sharp image pair, each `1 x 3 x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurPair {
    pub blurry: Tensor,
    pub sharp: Tensor,
}

impl BlurPair {
    pub fn new(blurry: Tensor, sharp: Tensor) -> Result<Self> {
        if blurry.shape() != sharp.shape() {
            return Err(CoreError::Input(format!(
                "blurry image is {} but sharp image is {}",
                blurry.shape(),
                sharp.shape()
            )));
        }
        Ok(Self { blurry, sharp })
    }
}

/// Averages the first `m` frames into a blurry image; the middle one of
/// them is the sharp target. `m` must be odd.
pub fn synthesize_blur(seq: &FrameSequence, m: usize) -> Result<BlurPair> {
    if m == 0 || m % 2 == 0 {
        return Err(CoreError::Input(format!("frame count to average must be odd, got {m}")));
    }
    if m > seq.len() {
        return Err(CoreError::Input(format!("cannot average {m} frames from a sequence of {}", seq.len())));
    }
    let frames = &seq.frames[..m];
    let mut acc = vec![0f64; frames[0].len()];
    for f in frames {
        for (a, &v) in acc.iter_mut().zip(f.data()) {
            *a += f64::from(v);
        }
    }
    let blurry = Tensor::from_vec(seq.shape(), acc.iter().map(|&a| (a / m as f64) as f32).collect())?;
    Ok(BlurPair {
        blurry,
        sharp: frames[(m - 1) / 2].clone(),
    })
}

/// The same image at full, half and quarter resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalePyramid {
    levels: Vec<Tensor>,
}

impl ScalePyramid {
    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k - 1]
    }

    pub fn into_levels(self) -> Vec<Tensor> {
        self.levels
    }
}

/// Successive bilinear halving. The same downsampler serves network inputs
/// and supervision targets.
pub fn build_pyramid(img: &Tensor) -> Result<ScalePyramid> {
    let s = img.shape();
    let div = 1 << (LEVELS - 1);
    if s.h % div != 0 || s.w % div != 0 || s.h == 0 || s.w == 0 {
        return Err(CoreError::Input(format!(
            "image size {}x{} is not a positive multiple of {div}",
            s.h, s.w
        )));
    }
    let mut levels = vec![img.clone()];
    for _ in 1..LEVELS {
        let next = downsample2(levels.last().expect("non-empty"))?;
        levels.push(next);
    }
    Ok(ScalePyramid { levels })
}

/// Where a patch is cut from and whether it is mirrored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CropWindow {
    pub y: usize,
    pub x: usize,
    pub size: usize,
    pub flip: bool,
}

impl CropWindow {
    /// Crops and optionally mirrors a `1 x C x H x W` image.
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        let crop = img.crop(self.y, self.x, self.size, self.size)?;
        Ok(if self.flip { flip_horizontal(&crop) } else { crop })
    }
}

/// Uniform crop offset over all valid positions plus a flip decision.
pub fn crop_window<R: Rng + ?Sized>(h: usize, w: usize, patch: usize, flip_prob: f64, rng: &mut R) -> Result<CropWindow> {
    if patch == 0 || h < patch || w < patch {
        return Err(CoreError::Input(format!("cannot cut a {patch}x{patch} patch from a {h}x{w} image")));
    }
    if !(0.0..=1.0).contains(&flip_prob) {
        return Err(CoreError::Config(format!("flip probability {flip_prob} is outside [0, 1]")));
    }
    Ok(CropWindow {
        y: rng.gen_range(0..=h - patch),
        x: rng.gen_range(0..=w - patch),
        size: patch,
        flip: rng.gen_bool(flip_prob),
    })
}

/// Aligned input and target pyramids cut from one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub blurry: ScalePyramid,
    pub sharp: ScalePyramid,
}

/// Random patch with random horizontal flip; the same window and flip apply
/// to both images.
pub fn sample_patch<R: Rng + ?Sized>(pair: &BlurPair, patch: usize, flip_prob: f64, rng: &mut R) -> Result<TrainingSample> {
    let s = pair.blurry.shape();
    let window = crop_window(s.h, s.w, patch, flip_prob, rng)?;
    Ok(TrainingSample {
        blurry: build_pyramid(&window.apply(&pair.blurry)?)?,
        sharp: build_pyramid(&window.apply(&pair.sharp)?)?,
    })
}

/// Stacks samples into per-level batches: `(blurry levels, sharp levels)`.
pub fn collate(samples: &[TrainingSample]) -> Result<(Vec<Tensor>, Vec<Tensor>)> {
    let stack = |pick: &dyn Fn(&TrainingSample) -> &ScalePyramid| -> Result<Vec<Tensor>> {
        (0..LEVELS)
            .map(|k| {
                let items: Vec<Tensor> = samples.iter().map(|s| pick(s).levels[k].clone()).collect();
                Ok(Tensor::stack(&items)?)
            })
            .collect()
    };
    Ok((stack(&|s| &s.blurry)?, stack(&|s| &s.sharp)?))
}

#[cfg(test)]
mod tests;
