//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Sample carries no usable signal (empty, zero variance, ...).
    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Estimator denominator vanished or a statistic is undefined.
    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("i/o failure at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AuditError>;
