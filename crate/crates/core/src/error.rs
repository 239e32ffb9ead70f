//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("secular equation did not converge (best bracket [{lo}, {hi}])")]
    SecularNonConvergence { lo: f64, hi: f64 },

    #[error("line search exhausted after {trials} trials (last sigma {sigma})")]
    LineSearchFailure { trials: usize, sigma: f64 },

    #[error("serialization error: {0}")]
    Serialization(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serialization(e.to_string())
    }
}
