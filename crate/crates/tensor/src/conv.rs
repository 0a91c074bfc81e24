//! Convolution kernels built on im2col/col2im and a strided GEMM.
//!
//! Convolutions are cross-correlations (no kernel flip). Weights are laid out
//! `[c_out, c_in, kh, kw]` for `conv2d` and `[c_in, c_out, kh, kw]` for
//! `conv_transpose2d`; biases are `[c_out, 1, 1, 1]`.
//!
//! Batch items are processed in parallel. Weight gradients are reduced in
//! batch order afterwards, so results do not depend on the thread count.

use rayon::prelude::*;

use crate::{Result, Scalar, Shape, Tensor, TensorError};

/// Geometry of a forward (gather) convolution from an `h x w` input with
/// `channels` planes to an `out_h x out_w` output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(channels: usize, h: usize, w: usize, kh: usize, kw: usize, stride: usize, padding: usize) -> Result<Self> {
        if stride == 0 {
            return Err(TensorError::Config("convolution stride must be positive".into()));
        }
        if kh == 0 || kw == 0 {
            return Err(TensorError::Config("convolution kernel must be non-empty".into()));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(TensorError::Config(format!(
                "{kh}x{kw} kernel does not fit a {h}x{w} input with padding {padding}"
            )));
        }
        Ok(Self {
            channels,
            h,
            w,
            kh,
            kw,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        })
    }

    /// Rows of the column matrix: `channels * kh * kw`.
    pub fn patch_len(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// A 1x1, stride-1, unpadded convolution needs no column buffer.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }

    /// Output coordinates `lo..hi` whose input coordinate at kernel offset
    /// `k` lies inside `0..extent`.
    #[inline]
    fn valid(&self, k: usize, extent: usize, out: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = self.padding.saturating_sub(k).div_ceil(s).min(out);
        let hi = (extent + self.padding).saturating_sub(k).div_ceil(s).min(out);
        (lo, hi.max(lo))
    }
}

/// Unfolds one `[channels, h, w]` item into a `[patch_len, out_h * out_w]`
/// matrix, replacing the contents of `cols`.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut Vec<T>) {
    let (s, ow) = (g.stride, g.out_w);
    let zeros = |cols: &mut Vec<T>, n: usize| cols.extend(std::iter::repeat_n(T::zero(), n));
    cols.clear();
    cols.reserve(g.patch_len() * g.out_plane());
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = g.valid(ky, g.h, g.out_h);
            for kx in 0..g.kw {
                let (xlo, xhi) = g.valid(kx, g.w, ow);
                zeros(cols, ylo * ow);
                for oy in ylo..yhi {
                    zeros(cols, xlo);
                    if xlo < xhi {
                        let first = (oy * s + ky - g.padding) * g.w + xlo * s + kx - g.padding;
                        if s == 1 {
                            cols.extend_from_slice(&plane[first..first + xhi - xlo]);
                        } else {
                            cols.extend(plane[first..].iter().step_by(s).take(xhi - xlo).copied());
                        }
                    }
                    zeros(cols, ow - xhi);
                }
                zeros(cols, (g.out_h - yhi) * ow);
            }
        }
    }
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_plane());
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeometry, x: &mut [T]) {
    let ohw = g.out_plane();
    debug_assert_eq!(cols.len(), g.patch_len() * ohw);
    let (s, ow) = (g.stride, g.out_w);
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (ylo, yhi) = g.valid(ky, g.h, g.out_h);
            for kx in 0..g.kw {
                let (xlo, xhi) = g.valid(kx, g.w, ow);
                if xlo == xhi {
                    continue;
                }
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                for oy in ylo..yhi {
                    let iy = oy * s + ky - g.padding;
                    let first = iy * g.w + xlo * s + kx - g.padding;
                    let inner = &src[oy * ow + xlo..oy * ow + xhi];
                    for (d, &v) in plane[first..].iter_mut().step_by(s).zip(inner) {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn check_bias<T: Scalar>(bias: Option<&Tensor<T>>, c_out: usize) -> Result<()> {
    match bias {
        Some(b) if b.len() != c_out => Err(TensorError::Config(format!(
            "bias has {} entries, expected {c_out}",
            b.len()
        ))),
        _ => Ok(()),
    }
}

fn add_bias<T: Scalar>(out: &mut [T], bias: Option<&Tensor<T>>, plane: usize) {
    if let Some(b) = bias {
        for (chunk, &bv) in out.chunks_mut(plane).zip(b.data()) {
            chunk.iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn bias_grad<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let s = dy.shape();
    let mut db = Tensor::zeros([s.c, 1, 1, 1]);
    for n in 0..s.n {
        for c in 0..s.c {
            db.data_mut()[c] += dy.plane(n, c).iter().copied().sum::<T>();
        }
    }
    db
}

/// Sums per-item weight gradients in batch order.
fn reduce_in_order<T: Scalar>(parts: Vec<(Vec<T>, Vec<T>)>, w_shape: Shape) -> (Vec<Vec<T>>, Tensor<T>) {
    let mut dw = Tensor::zeros(w_shape);
    let mut dxs = Vec::with_capacity(parts.len());
    for (dx, dwn) in parts {
        for (a, b) in dw.data_mut().iter_mut().zip(dwn) {
            *a += b;
        }
        dxs.push(dx);
    }
    (dxs, dw)
}

fn conv_geometry<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.c != xs.c {
        return Err(TensorError::Config(format!(
            "conv2d: input has {} channels but weight {ws} expects {}",
            xs.c, ws.c
        )));
    }
    ConvGeometry::new(xs.c, xs.h, xs.w, ws.h, ws.w, stride, padding)
}

/// Output extent of `conv2d` for the given operands.
pub fn conv2d_output_shape<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Shape> {
    let g = conv_geometry(x, weight, stride, padding)?;
    Ok(Shape::new(x.shape().n, weight.shape().n, g.out_h, g.out_w))
}

/// `y[n, o] = bias[o] + sum_i w[o, i] ⋆ x[n, i]`.
pub fn conv2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, weight, stride, padding)?;
    let c_out = weight.shape().n;
    check_bias(bias, c_out)?;
    let (k, ohw) = (g.patch_len(), g.out_plane());
    let mut out = Tensor::zeros([x.shape().n, c_out, g.out_h, g.out_w]);
    let item_len = c_out * ohw;
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, y)| {
            let xn = x.item(n);
            let mut buf = Vec::new();
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut buf);
                &buf
            };
            T::gemm(c_out, k, ohw, T::one(), weight.data(), (k, 1), cols, (ohw, 1), T::zero(), y, (ohw, 1));
            add_bias(y, bias, ohw);
        });
    Ok(out)
}

/// Vector-Jacobian product of [`conv2d`]: `(dx, dw, db)` for upstream `dy`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = conv_geometry(x, weight, stride, padding)?;
    let c_out = weight.shape().n;
    let (k, ohw) = (g.patch_len(), g.out_plane());
    let expected = Shape::new(x.shape().n, c_out, g.out_h, g.out_w);
    if dy.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d_backward",
            lhs: dy.shape(),
            rhs: expected,
        });
    }
    let parts: Vec<(Vec<T>, Vec<T>)> = (0..x.shape().n)
        .into_par_iter()
        .map(|n| {
            let xn = x.item(n);
            let dyn_ = dy.item(n);
            let mut buf = Vec::new();
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, &g, &mut buf);
                &buf
            };
            let mut dw = vec![T::zero(); c_out * k];
            // dW = dY · colsᵀ
            T::gemm(c_out, ohw, k, T::one(), dyn_, (ohw, 1), cols, (1, ohw), T::zero(), &mut dw, (k, 1));
            let mut dx = vec![T::zero(); xn.len()];
            if g.is_pointwise() {
                T::gemm(k, c_out, ohw, T::one(), weight.data(), (1, k), dyn_, (ohw, 1), T::zero(), &mut dx, (ohw, 1));
            } else {
                // dcols = Wᵀ · dY, then fold back onto the input grid
                let mut dcols = vec![T::zero(); k * ohw];
                T::gemm(k, c_out, ohw, T::one(), weight.data(), (1, k), dyn_, (ohw, 1), T::zero(), &mut dcols, (ohw, 1));
                col2im(&dcols, &g, &mut dx);
            }
            (dx, dw)
        })
        .collect();
    let (dxs, dw) = reduce_in_order(parts, weight.shape());
    let dx = Tensor::from_vec(x.shape(), dxs.concat())?;
    Ok((dx, dw, bias_grad(dy)))
}

/// Geometry of the gather convolution that a transposed convolution inverts,
/// with the requirement that the transposed output is exactly `stride`× the input.
fn transposed_geometry<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<ConvGeometry> {
    let (xs, ws) = (x.shape(), weight.shape());
    if ws.n != xs.c {
        return Err(TensorError::Config(format!(
            "conv_transpose2d: input has {} channels but weight {ws} expects {}",
            xs.c, ws.n
        )));
    }
    if stride == 0 {
        return Err(TensorError::Config("convolution stride must be positive".into()));
    }
    let out = |len: usize, k: usize| ((len - 1) * stride + k).checked_sub(2 * padding);
    let (oh, ow) = (out(xs.h, ws.h), out(xs.w, ws.w));
    if oh != Some(stride * xs.h) || ow != Some(stride * xs.w) {
        return Err(TensorError::Config(format!(
            "conv_transpose2d with {}x{} kernel, stride {stride}, padding {padding} does not scale {}x{} by exactly {stride}",
            ws.h, ws.w, xs.h, xs.w
        )));
    }
    let g = ConvGeometry::new(ws.c, stride * xs.h, stride * xs.w, ws.h, ws.w, stride, padding)?;
    debug_assert_eq!((g.out_h, g.out_w), (xs.h, xs.w));
    Ok(g)
}

/// Transposed convolution (the adjoint of `conv2d` in its input) with a
/// `[c_in, c_out, kh, kw]` weight; the output is exactly `stride`× larger.
pub fn conv_transpose2d<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = transposed_geometry(x, weight, stride, padding)?;
    let (c_in, c_out) = (x.shape().c, weight.shape().c);
    check_bias(bias, c_out)?;
    let (k, hw) = (g.patch_len(), g.out_plane());
    let mut out = Tensor::zeros([x.shape().n, c_out, g.h, g.w]);
    let item_len = c_out * g.h * g.w;
    out.data_mut()
        .par_chunks_mut(item_len)
        .enumerate()
        .for_each(|(n, y)| {
            let mut cols = vec![T::zero(); k * hw];
            T::gemm(k, c_in, hw, T::one(), weight.data(), (1, k), x.item(n), (hw, 1), T::zero(), &mut cols, (hw, 1));
            col2im(&cols, &g, y);
            add_bias(y, bias, g.h * g.w);
        });
    Ok(out)
}

/// Vector-Jacobian product of [`conv_transpose2d`].
pub fn conv_transpose2d_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let g = transposed_geometry(x, weight, stride, padding)?;
    let (c_in, c_out) = (x.shape().c, weight.shape().c);
    let (k, hw) = (g.patch_len(), g.out_plane());
    let expected = Shape::new(x.shape().n, c_out, g.h, g.w);
    if dy.shape() != expected {
        return Err(TensorError::ShapeMismatch {
            op: "conv_transpose2d_backward",
            lhs: dy.shape(),
            rhs: expected,
        });
    }
    let parts: Vec<(Vec<T>, Vec<T>)> = (0..x.shape().n)
        .into_par_iter()
        .map(|n| {
            let mut dcols = Vec::new();
            im2col(dy.item(n), &g, &mut dcols);
            let mut dx = vec![T::zero(); c_in * hw];
            T::gemm(c_in, k, hw, T::one(), weight.data(), (k, 1), &dcols, (hw, 1), T::zero(), &mut dx, (hw, 1));
            let mut dw = vec![T::zero(); c_in * k];
            T::gemm(c_in, hw, k, T::one(), x.item(n), (hw, 1), &dcols, (1, hw), T::zero(), &mut dw, (k, 1));
            (dx, dw)
        })
        .collect();
    let (dxs, dw) = reduce_in_order(parts, weight.shape());
    let dx = Tensor::from_vec(x.shape(), dxs.concat())?;
    Ok((dx, dw, bias_grad(dy)))
}
