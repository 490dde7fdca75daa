use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid is not mirror-symmetric: {0}")]
    NotSymmetric(String),

    #[error("degenerate allocation: {0}")]
    Degenerate(String),

    #[error("solver did not converge after {iterations} iterations (gap {gap:.3e}, infeasibility {infeasibility:.3e})")]
    NotConverged {
        iterations: usize,
        gap: f64,
        infeasibility: f64,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serialization(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
