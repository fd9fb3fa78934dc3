use thiserror::Error;

use crate::engine::Trace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller broke an operation's contract (bad lengths, bad argument ranges).
    #[error("usage error: {0}")]
    Usage(String),

    /// Arithmetic left the domain of the operation (zero denominators, non-finite values).
    #[error("domain error: {0}")]
    Domain(String),

    /// A configuration with no feasible solution, e.g. an empty clipping interval.
    #[error("configuration error: {0}")]
    Config(String),

    /// A theorem hypothesis does not hold for the given constants.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// The iteration produced a non-finite value. The partial trace is kept.
    #[error("diverged at iteration {iteration}: {reason}")]
    Divergence {
        iteration: usize,
        reason: String,
        trace: Box<Trace>,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}
