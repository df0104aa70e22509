use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across sensing, reconstruction, metrics and the bench driver.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CsError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid sparsity: k = {k} exceeds n = {n}")]
    InvalidSparsity { k: usize, n: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("ill-conditioned system (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("solver diverged at iteration {iteration}: non-finite objective")]
    Diverged { iteration: usize },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CsError {
    pub(crate) fn io(path: impl Into<PathBuf>, err: impl std::fmt::Display) -> Self {
        CsError::Io {
            path: path.into(),
            message: err.to_string(),
        }
    }

    /// Stable numeric code used by the C ABI.
    pub fn code(&self) -> i32 {
        match self {
            CsError::InvalidDimension(_) => 1,
            CsError::InvalidSparsity { .. } => 2,
            CsError::InvalidParameter(_) => 3,
            CsError::ResourceLimit(_) => 4,
            CsError::IllConditioned { .. } => 5,
            CsError::Diverged { .. } => 6,
            CsError::UndefinedMetric(_) => 7,
            CsError::InvalidConfig(_) => 8,
            CsError::Io { .. } => 9,
        }
    }
}

pub type Result<T> = std::result::Result<T, CsError>;
