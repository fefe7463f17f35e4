use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by tensor arithmetic, losses, data loading and persistence.
#[derive(Debug, Error)]
pub enum NvcError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {0:?}: every dimension must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("{op} expects a tensor of rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },

    #[error("{op} received a non-positive input ({value}) without an epsilon guard")]
    NonPositiveLog { op: &'static str, value: f64 },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("parameter {0} has no gradient")]
    MissingGradient(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{kind} file has wrong magic number {found:#010x} (expected {expected:#010x})")]
    BadMagic {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated file {path}: {detail}")]
    Truncated { path: PathBuf, detail: String },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("config error at key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("numeric failure: non-finite {term} at step {step}")]
    NumericFailure { term: String, step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, NvcError>;
