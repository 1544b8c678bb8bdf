use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on sizes, indices or option values was violated.
    #[error("usage error: {0}")]
    Usage(String),
    /// A scalar argument lies outside the domain of a closed-form expression.
    #[error("domain error: {0}")]
    Domain(String),
    /// No feasible point exists (or none could be constructed).
    #[error("infeasible: {0}")]
    Infeasible(String),
    /// Non-finite evaluations or a failed factorization.
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
