use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("attribute `{attribute}` not found; available attributes: {available:?}")]
    UnknownAttribute { attribute: String, available: Vec<String> },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("duplicate image paths: {0:?}")]
    DuplicatePaths(Vec<String>),
    #[error("numerical failure at step {step}: {message}")]
    NonFinite { step: usize, message: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("incompatible encoding: {0}")]
    Incompatible(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures caused by the numbers themselves (NaN, collapse).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}
