use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain where the operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a grid do not.
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// The numerical setup cannot represent the requested problem.
    #[error("configuration error: {0}")]
    Configuration(String),

    /// A configuration key failed validation.
    #[error("invalid value for `{key}`: {reason}")]
    Validation { key: String, reason: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("integration failed: {0}")]
    Integration(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
