use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Bad argument: wrong shape, zero count, out-of-range index.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A precondition of a bound is not met (e.g. γ outside [0.5, 1)).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// KL or log-policy needs `old(a|s) > 0` wherever the other side is positive.
    #[error("support error at state {state}, action {action}: {detail}")]
    Support {
        state: usize,
        action: usize,
        detail: String,
    },

    /// A checked inequality failed during an iteration.
    #[error("invariant violated at step {step}: {check} ({detail})")]
    Invariant {
        step: usize,
        check: String,
        detail: String,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}:{line}:{column}: {message}", path.display())]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }
}
