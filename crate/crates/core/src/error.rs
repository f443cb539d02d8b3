use std::path::PathBuf;

/// Errors produced anywhere in the fingerprinting pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("cannot read audio file {path}: {reason}")]
    Audio { path: PathBuf, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("signal too short: {0}")]
    TooShort(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear algebra failure: {0}")]
    LinAlg(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error("model/index mismatch: {0}")]
    Mismatch(String),

    #[error("external command failed: {0}")]
    ExternalCommand(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
