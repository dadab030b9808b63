use thiserror::Error;

/// Errors produced by pipeline operations.
#[derive(Error, Debug)]
pub enum Error {
    /// An operation precondition was violated by the caller.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A packed batch failed structural validation.
    #[error("corrupt batch: {0}")]
    CorruptBatch(String),

    /// A quantized tensor failed structural validation.
    #[error("corrupt tensor: {0}")]
    CorruptTensor(String),

    /// A serialized artifact could not be decoded.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
