//! Error type shared across the toolkit.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape disagreement between rasters, grids, or parameter sets.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Data that violates an operation's preconditions (non-finite values, empty inputs).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Configuration value outside its documented range.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Numerical failure during training (non-finite gradient or loss).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// API contract broken by the caller (stale cache, wrong call order).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Missing or malformed external data (images, checkpoints, datasets).
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Filesystem failure, annotated with the path involved.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
