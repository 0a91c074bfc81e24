//! Coarse-to-fine single-image deblurring with one multi-input,
//! multi-output U-Net.
//!
//! The encoder ingests the blurry image at full, half and quarter
//! resolution; the decoder emits a restored image at each of those scales;
//! every decoder level reads a fusion of all encoder outputs. Training
//! minimises a multi-scale L1 content loss plus an L1 loss between DFT
//! spectra.
//!
//! * [`model`] — configuration, layer inventory and forward pass
//! * [`losses`] — content, frequency and total losses
//! * [`data`] — blur synthesis, pyramids, patch sampling, manifests, PNG I/O
//! * [`train`] — Adam training loop, schedule and logs
//! * [`checkpoint`] — binary checkpoint format
//! * [`eval`] — PSNR/SSIM, self-ensemble inference and reports
//! * [`gradcheck`] — finite-difference verification of the full model

pub mod checkpoint;
pub mod data;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod losses;
pub mod model;
pub mod train;

pub use error::{CoreError, Result};
pub use model::{FusionMode, MimoUNet, ModelConfig, Variant};
