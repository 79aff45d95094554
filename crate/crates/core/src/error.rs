use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the fitting and generation pipeline.
///
/// Variants are grouped by the exit-code class the command line driver maps
/// them to (configuration, data, numerical).
#[derive(Debug, Error)]
pub enum SgError {
    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("structural error: {0}")]
    Structure(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("missing upstream output for {step}: {path}")]
    Staging { step: String, path: PathBuf },

    #[error("root finder did not converge after {iterations} iterations (bracket [{lo}, {hi}])")]
    NoConvergence { iterations: usize, lo: f64, hi: f64 },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("truncated payload: expected {expected} values, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl SgError {
    /// Process exit code: 2 configuration, 3 data, 4 numerical or fit failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            SgError::Parameter(_)
            | SgError::Config(_)
            | SgError::Staging { .. }
            | SgError::Precondition(_) => 2,
            SgError::Structure(_)
            | SgError::Data(_)
            | SgError::Format(_)
            | SgError::Truncated { .. }
            | SgError::Io(_)
            | SgError::Json(_)
            | SgError::Csv(_) => 3,
            SgError::NoConvergence { .. } | SgError::Fit(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SgError>;
