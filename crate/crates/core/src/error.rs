use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Network or environment description that cannot be built or evaluated.
    #[error("configuration error: {0}")]
    Config(String),

    /// An API was called out of order (e.g. backward before forward).
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// A documented precondition of an operation was violated by its inputs.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
