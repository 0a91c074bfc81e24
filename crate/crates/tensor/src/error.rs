use thiserror::Error;

use crate::Shape;

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Shape,
        rhs: Shape,
    },

    #[error("{op}: data length {len} does not match shape {shape}")]
    DataLength {
        op: &'static str,
        shape: Shape,
        len: usize,
    },

    /// An operator was configured with parameters it cannot honour
    /// (channel mismatch, zero stride, non-doubling transposed conv, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The graph was driven incorrectly, e.g. `backward` on a non-scalar.
    #[error("usage error: {0}")]
    Usage(String),
}
