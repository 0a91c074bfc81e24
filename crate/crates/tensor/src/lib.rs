//! Dense NCHW tensors and a small tape-based reverse-mode differentiation
//! engine, restricted to the operations an image-restoration U-Net needs:
//! strided and transposed convolution, elementwise arithmetic, ReLU,
//! channel concatenation, bilinear resampling, the 2-D DFT and an L1 mean.
//!
//! Everything is generic over [`Scalar`] so the same graph can run in `f32`
//! for training and in `f64` for finite-difference gradient checks.

mod adam;
pub mod conv;
mod error;
pub mod fft;
mod graph;
mod param;
pub mod resize;
mod scalar;
mod tensor;
pub mod transform;

pub use adam::{Adam, AdamConfig};
pub use error::{Result, TensorError};
pub use fft::{fft2, ComplexSpectrum};
pub use graph::{Gradients, Graph, Var};
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tensor::{Shape, Tensor};
