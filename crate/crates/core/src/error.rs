use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = TohmError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum TohmError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// The optimizer ran out of iterations; `best` is the best iterate seen.
    #[error("optimizer did not converge after {iterations} iterations (best point {best:?}, value {value})")]
    NonConvergence {
        best: Vec<f64>,
        value: f64,
        iterations: usize,
    },

    #[error("fit failed at theta = {theta}: {reason}")]
    FitFailure { theta: f64, reason: String },

    #[error("{failed} of {total} replicates failed (seeds {seeds:?})")]
    EnsembleFailure {
        failed: usize,
        total: usize,
        seeds: Vec<u64>,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl TohmError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        TohmError::InvalidArgument(msg.into())
    }
}
