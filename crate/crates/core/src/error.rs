use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid experiment or dataset configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called with arguments that violate its contract.
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values appeared where finite ones are required.
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}

pub(crate) fn numeric(msg: impl Into<String>) -> Error {
    Error::Numeric(msg.into())
}
