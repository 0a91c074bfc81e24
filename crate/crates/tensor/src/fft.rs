//! Unnormalized 2-D discrete Fourier transform over each (batch, channel) plane.
//!
//! Row and column passes use `rustfft`, which plans mixed-radix kernels and
//! falls back to Bluestein/Rader for awkward lengths, so any `h x w` works.

use rustfft::num_complex::Complex;
use rustfft::{FftDirection, FftPlanner};

use crate::{Scalar, Shape, Tensor};

/// Real and imaginary parts of a per-plane 2-D spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrum<T = f32> {
    pub real: Tensor<T>,
    pub imag: Tensor<T>,
}

impl<T: Scalar> ComplexSpectrum<T> {
    pub fn shape(&self) -> Shape {
        self.real.shape()
    }

    /// Sum of squared magnitudes over every bin.
    pub fn energy(&self) -> T {
        self.real
            .data()
            .iter()
            .zip(self.imag.data())
            .map(|(&r, &i)| r * r + i * i)
            .sum()
    }
}

/// Forward DFT: `X[u, v] = sum_{y, x} x[y, x] e^{-2πi (uy/H + vx/W)}`.
pub fn fft2<T: Scalar>(x: &Tensor<T>) -> ComplexSpectrum<T> {
    let zeros = Tensor::zeros(x.shape());
    transform(x, &zeros, FftDirection::Forward)
}

/// Adjoint of the real-input forward DFT. Given upstream gradients of the
/// real and imaginary outputs, returns `Re(F^H (g_re + i g_im))`, i.e. the
/// real part of the unnormalized inverse transform.
pub fn fft2_adjoint<T: Scalar>(grad_real: &Tensor<T>, grad_imag: &Tensor<T>) -> Tensor<T> {
    transform(grad_real, grad_imag, FftDirection::Inverse).real
}

fn transform<T: Scalar>(re: &Tensor<T>, im: &Tensor<T>, direction: FftDirection) -> ComplexSpectrum<T> {
    let shape = re.shape();
    debug_assert_eq!(shape, im.shape());
    let (h, w) = (shape.h, shape.w);
    let mut planner = FftPlanner::<T>::new();
    let row_fft = planner.plan_fft(w, direction);
    let col_fft = planner.plan_fft(h, direction);

    let mut out_re = Tensor::zeros(shape);
    let mut out_im = Tensor::zeros(shape);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); h * w];
    let mut transposed = buf.clone();
    for n in 0..shape.n {
        for c in 0..shape.c {
            for ((z, &r), &i) in buf.iter_mut().zip(re.plane(n, c)).zip(im.plane(n, c)) {
                *z = Complex::new(r, i);
            }
            // all rows at once, then all columns via a transpose
            row_fft.process(&mut buf);
            for y in 0..h {
                for x in 0..w {
                    transposed[x * h + y] = buf[y * w + x];
                }
            }
            col_fft.process(&mut transposed);
            let start = (n * shape.c + c) * h * w;
            let (dst_re, dst_im) = (
                &mut out_re.data_mut()[start..start + h * w],
                &mut out_im.data_mut()[start..start + h * w],
            );
            for y in 0..h {
                for x in 0..w {
                    let z = transposed[x * h + y];
                    dst_re[y * w + x] = z.re;
                    dst_im[y * w + x] = z.im;
                }
            }
        }
    }
    ComplexSpectrum {
        real: out_re,
        imag: out_im,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    /// O(n²) DFT summation.
    fn naive_dft(x: &Tensor<f64>) -> ComplexSpectrum<f64> {
        let s = x.shape();
        let mut re = Tensor::zeros(s);
        let mut im = Tensor::zeros(s);
        for n in 0..s.n {
            for c in 0..s.c {
                for u in 0..s.h {
                    for v in 0..s.w {
                        let (mut ar, mut ai) = (0.0, 0.0);
                        for y in 0..s.h {
                            for xx in 0..s.w {
                                let phase = -2.0 * PI * ((u * y) as f64 / s.h as f64 + (v * xx) as f64 / s.w as f64);
                                ar += x.at(n, c, y, xx) * phase.cos();
                                ai += x.at(n, c, y, xx) * phase.sin();
                            }
                        }
                        re.set(n, c, u, v, ar);
                        im.set(n, c, u, v, ai);
                    }
                }
            }
        }
        ComplexSpectrum { real: re, imag: im }
    }

    fn max_rel(a: &ComplexSpectrum<f64>, b: &ComplexSpectrum<f64>) -> f64 {
        let scale = b.real.max_abs().max(b.imag.max_abs()).max(1e-300);
        a.real
            .data()
            .iter()
            .zip(b.real.data())
            .chain(a.imag.data().iter().zip(b.imag.data()))
            .map(|(x, y)| (x - y).abs() / scale)
            .fold(0.0, f64::max)
    }

    #[test]
    fn constant_image_is_dc_only() {
        let x = Tensor::<f64>::full([1, 1, 6, 5], 0.25);
        let s = fft2(&x);
        assert!((s.real.at(0, 0, 0, 0) - 0.25 * 30.0).abs() < 1e-12);
        let off_dc = s.real.data()[1..].iter().chain(s.imag.data()).fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(off_dc < 1e-12);
    }

    #[test]
    fn origin_impulse_has_flat_spectrum() {
        let mut x = Tensor::<f64>::zeros([1, 1, 7, 4]);
        x.set(0, 0, 0, 0, 1.0);
        let s = fft2(&x);
        assert!(s.real.data().iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(s.imag.data().iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn matches_naive_dft_on_odd_and_even_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(4, 4), (7, 5), (16, 16), (1, 9), (3, 1)] {
            let x = Tensor::<f64>::randn([2, 2, h, w], 1.0, &mut rng);
            assert!(max_rel(&fft2(&x), &naive_dft(&x)) < 1e-6, "{h}x{w}");
        }
    }

    #[test]
    fn real_input_spectrum_is_hermitian() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (6, 7);
        let s = fft2(&Tensor::<f64>::randn([1, 1, h, w], 1.0, &mut rng));
        for u in 0..h {
            for v in 0..w {
                let (cu, cv) = ((h - u) % h, (w - v) % w);
                assert!((s.real.at(0, 0, u, v) - s.real.at(0, 0, cu, cv)).abs() < 1e-10);
                assert!((s.imag.at(0, 0, u, v) + s.imag.at(0, 0, cu, cv)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::<f64>::randn([1, 2, 5, 6], 1.0, &mut rng);
        let gr = Tensor::<f64>::randn([1, 2, 5, 6], 1.0, &mut rng);
        let gi = Tensor::<f64>::randn([1, 2, 5, 6], 1.0, &mut rng);
        let s = fft2(&x);
        let lhs = s.real.dot(&gr).unwrap() + s.imag.dot(&gi).unwrap();
        let rhs = x.dot(&fft2_adjoint(&gr, &gi)).unwrap();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn linear(h in 1usize..9, w in 1usize..9, alpha in -3.0f64..3.0, beta in -3.0f64..3.0, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn([1, 2, h, w], 1.0, &mut rng);
            let y = Tensor::<f64>::randn([1, 2, h, w], 1.0, &mut rng);
            let combined = fft2(&x.scale(alpha).add(&y.scale(beta)).unwrap());
            let (fx, fy) = (fft2(&x), fft2(&y));
            let re = fx.real.scale(alpha).add(&fy.real.scale(beta)).unwrap();
            let im = fx.imag.scale(alpha).add(&fy.imag.scale(beta)).unwrap();
            for (a, b) in combined.real.data().iter().zip(re.data()).chain(combined.imag.data().iter().zip(im.data())) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn parseval(h in 1usize..12, w in 1usize..12, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = Tensor::<f64>::randn([1, 1, h, w], 1.0, &mut rng);
            let lhs = x.dot(&x).unwrap() * (h * w) as f64;
            let rhs = fft2(&x).energy();
            prop_assert!((lhs - rhs).abs() <= 1e-5 * lhs.max(1e-12));
        }
    }
}
