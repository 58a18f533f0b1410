//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("simulation diverged at step {step}: {detail}")]
    Diverged { step: usize, detail: String },

    #[error("degenerate particle ensemble: max log-weight {max_log_weight}")]
    DegenerateEnsemble { max_log_weight: f64 },

    #[error("degenerate likelihood: noise level must be positive")]
    DegenerateLikelihood,

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("rank check failed: expected {expected}, achieved {achieved}")]
    RankCheck { expected: usize, achieved: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },
}

impl Error {
    /// Wraps an error with benchmark context (setup, strategy, k).
    pub fn with_context(self, context: &str) -> Error {
        match self {
            Error::Diverged { step, detail } => Error::Diverged {
                step,
                detail: format!("{context}: {detail}"),
            },
            Error::Config(msg) => Error::Config(format!("{context}: {msg}")),
            Error::Dimension(msg) => Error::Dimension(format!("{context}: {msg}")),
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
