use thiserror::Error;

/// Errors produced across the crate.
///
/// Variants are grouped by failure class so callers (the CLI in particular)
/// can map them onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input: schema violations, invariant breaches, bad arguments.
    #[error("validation error: {0}")]
    Validation(String),

    /// A constrained space could not be satisfied.
    #[error("infeasible: {0}")]
    Feasibility(String),

    /// Training diverged or otherwise failed.
    #[error("training failed at epoch {epoch}: {message}")]
    Training {
        epoch: usize,
        message: String,
        /// Per-epoch validation accuracies completed before the failure.
        trace: Vec<f64>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// A log or checkpoint line could not be parsed.
    #[error("{path}:{line}: {message}")]
    Corrupt {
        path: String,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
