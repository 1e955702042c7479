use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A per-level bidiagonal/tridiagonal system hit a vanishing pivot.
    #[error("singular system at time level {level}, node {index} (pivot {pivot:e})")]
    StepFailure {
        level: usize,
        index: usize,
        pivot: f64,
    },

    /// The reduced Newton matrix could not be factored as SPD, or the computed
    /// direction is not a descent direction.
    #[error("no descent direction: {reason} (smallest eigenvalue {min_eigenvalue:e})")]
    NonDescent { reason: String, min_eigenvalue: f64 },

    #[error("line search failed after {trials} trials (last step {last_step:e})")]
    LineSearchFailure { trials: usize, last_step: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
        if expected == got {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { what, expected, got })
        }
    }
}
