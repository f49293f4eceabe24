use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the physical domain of the model.
    #[error("domain error: {0}")]
    Domain(String),

    /// The caller supplied inconsistent or insufficient input.
    #[error("usage error: {0}")]
    Usage(String),

    /// A grid is too coarse for the requested kernel or curve.
    #[error("resolution error: {0}")]
    Resolution(String),

    /// A ratio is undefined because its denominator vanishes.
    #[error("undefined: {0}")]
    Undefined(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
