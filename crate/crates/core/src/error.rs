//! Error types shared by the tensor engine and the spatial kernels.

use thiserror::Error;

/// Errors raised by tensor construction, tape operations, and layers.
#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {op} got {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for shape {shape:?}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        shape: Vec<usize>,
    },

    #[error("{op}: expected {expected} data elements for shape {shape:?}, got {got}")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op} produced a non-finite value at flat index {index}")]
    NonFinite { op: &'static str, index: usize },

    #[error("{0}")]
    Invalid(String),

    #[error("backward already ran on this tape; build a fresh tape for another pass")]
    TapeConsumed,

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("batch normalization over a single element per channel has undefined variance")]
    DegenerateBatch,

    #[error("optimizer learning rate must be positive, got {0}")]
    BadLearningRate(f64),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TensorError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        TensorError::Invalid(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, TensorError>;
