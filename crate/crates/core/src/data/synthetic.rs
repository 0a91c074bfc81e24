//! Procedural scenes for tests and smoke runs: a colored pattern of
//! sinusoidal gratings and soft-edged disks translating at constant
//! velocity. Frames are evaluated analytically at every shift, so
//! sub-pixel motion involves no resampling.

use std::f64::consts::PI;

use mimo_tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{synthesize_blur, BlurPair, FrameSequence};
use crate::Result;

#[derive(Clone, Debug)]
struct Grating {
    freq: (f64, f64),
    phase: f64,
    color: [f64; 3],
}

#[derive(Clone, Debug)]
struct Disk {
    center: (f64, f64),
    radius: f64,
    softness: f64,
    color: [f64; 3],
}

/// A random scene and its motion.
#[derive(Clone, Debug)]
pub struct Scene {
    gratings: Vec<Grating>,
    disks: Vec<Disk>,
    /// Pixels per frame, `(dy, dx)`.
    pub velocity: (f64, f64),
}

impl Scene {
    /// Random scene sized for an `h x w` canvas, moving `speed` pixels per
    /// frame in a random direction.
    pub fn random(h: usize, w: usize, speed: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let color = |rng: &mut ChaCha8Rng| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
        let gratings = (0..3)
            .map(|_| {
                let wavelength = rng.gen_range(8.0..24.0);
                let angle = rng.gen_range(0.0..PI);
                let f = 2.0 * PI / wavelength;
                Grating {
                    freq: (f * angle.sin(), f * angle.cos()),
                    phase: rng.gen_range(0.0..2.0 * PI),
                    color: color(&mut rng),
                }
            })
            .collect();
        let extent = h.min(w) as f64;
        let disks = (0..6)
            .map(|_| Disk {
                center: (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)),
                radius: rng.gen_range(0.08..0.2) * extent,
                softness: rng.gen_range(0.5..2.0),
                color: color(&mut rng),
            })
            .collect();
        let angle = rng.gen_range(0.0..2.0 * PI);
        Self {
            gratings,
            disks,
            velocity: (speed * angle.sin(), speed * angle.cos()),
        }
    }

    fn sample(&self, y: f64, x: f64, c: usize) -> f64 {
        let mut v = 0.5;
        for g in &self.gratings {
            v += 0.15 * g.color[c] * (g.freq.0 * y + g.freq.1 * x + g.phase).sin();
        }
        for d in &self.disks {
            let r = ((y - d.center.0).powi(2) + (x - d.center.1).powi(2)).sqrt();
            let alpha = 1.0 / (1.0 + ((r - d.radius) / d.softness).exp());
            v = v * (1.0 - alpha) + d.color[c] * alpha;
        }
        v.clamp(0.0, 1.0)
    }

    /// Frame `t` of the motion, `1 x 3 x h x w`.
    pub fn frame(&self, h: usize, w: usize, t: f64) -> Tensor {
        let (dy, dx) = (self.velocity.0 * t, self.velocity.1 * t);
        Tensor::from_fn([1, 3, h, w], |_, c, y, x| self.sample(y as f64 - dy, x as f64 - dx, c) as f32)
    }

    /// `frames` consecutive frames centred on `t = 0`.
    pub fn sequence(&self, h: usize, w: usize, frames: usize) -> Result<FrameSequence> {
        let mid = (frames as f64 - 1.0) / 2.0;
        FrameSequence::new((0..frames).map(|i| self.frame(h, w, i as f64 - mid)).collect())
    }
}

/// `count` blurry/sharp pairs of `size x size`, each averaging `m` frames
/// of its own random scene.
pub fn pairs(count: usize, size: usize, m: usize, speed: f64, seed: u64) -> Result<Vec<BlurPair>> {
    (0..count)
        .map(|i| {
            let scene = Scene::random(size, size, speed, seed.wrapping_add(i as u64));
            synthesize_blur(&scene.sequence(size, size, m)?, m)
        })
        .collect()
}
