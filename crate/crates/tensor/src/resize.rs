//! Separable bilinear resampling with half-pixel-centre alignment.
//!
//! Output sample `i` reads source coordinate `(i + 0.5) * in / out - 0.5`,
//! clamped to the valid range. Halving therefore averages each 2x2 block
//! exactly, and doubling interpolates at quarter offsets.

use crate::{Result, Scalar, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
struct Tap {
    lo: usize,
    hi: usize,
    frac: f64,
}

fn taps(input: usize, output: usize) -> Vec<Tap> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            Tap {
                lo,
                hi,
                frac: src - lo as f64,
            }
        })
        .collect()
}

fn check(x_h: usize, x_w: usize, out_h: usize, out_w: usize) -> Result<()> {
    if x_h == 0 || x_w == 0 || out_h == 0 || out_w == 0 {
        return Err(TensorError::Config(format!(
            "cannot resize {x_h}x{x_w} to {out_h}x{out_w}"
        )));
    }
    Ok(())
}

/// Resizes every plane of `x` to `out_h x out_w`.
pub fn bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    check(s.h, s.w, out_h, out_w)?;
    let (ty, tx) = (taps(s.h, out_h), taps(s.w, out_w));
    let mut out = Tensor::zeros(s.with_spatial(out_h, out_w));
    let mut row = vec![T::zero(); s.w];
    let mut k = 0;
    for n in 0..s.n {
        for c in 0..s.c {
            let plane = x.plane(n, c);
            for t in &ty {
                let f = T::from_real(t.frac);
                let (a, b) = (&plane[t.lo * s.w..(t.lo + 1) * s.w], &plane[t.hi * s.w..(t.hi + 1) * s.w]);
                for ((r, &va), &vb) in row.iter_mut().zip(a).zip(b) {
                    *r = va + (vb - va) * f;
                }
                for u in &tx {
                    let f = T::from_real(u.frac);
                    out.data_mut()[k] = row[u.lo] + (row[u.hi] - row[u.lo]) * f;
                    k += 1;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`bilinear`]: maps an upstream gradient of the resized tensor
/// back onto the `in_h x in_w` grid.
pub fn bilinear_backward<T: Scalar>(dy: &Tensor<T>, in_h: usize, in_w: usize) -> Result<Tensor<T>> {
    let s = dy.shape();
    check(in_h, in_w, s.h, s.w)?;
    let (ty, tx) = (taps(in_h, s.h), taps(in_w, s.w));
    let mut dx = Tensor::zeros(s.with_spatial(in_h, in_w));
    let mut row = vec![T::zero(); in_w];
    for n in 0..s.n {
        for c in 0..s.c {
            let g = dy.plane(n, c);
            let start = (n * s.c + c) * in_h * in_w;
            for (oy, t) in ty.iter().enumerate() {
                row.fill(T::zero());
                for (ox, u) in tx.iter().enumerate() {
                    let v = g[oy * s.w + ox];
                    let f = T::from_real(u.frac);
                    row[u.lo] += v * (T::one() - f);
                    row[u.hi] += v * f;
                }
                let f = T::from_real(t.frac);
                let plane = &mut dx.data_mut()[start..start + in_h * in_w];
                for (xx, &r) in row.iter().enumerate() {
                    plane[t.lo * in_w + xx] += r * (T::one() - f);
                    plane[t.hi * in_w + xx] += r * f;
                }
            }
        }
    }
    Ok(dx)
}

/// Halves both spatial extents; they must be even.
pub fn downsample2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let s = x.shape();
    if s.h % 2 != 0 || s.w % 2 != 0 {
        return Err(TensorError::Config(format!("cannot halve odd extent {}x{}", s.h, s.w)));
    }
    bilinear(x, s.h / 2, s.w / 2)
}
