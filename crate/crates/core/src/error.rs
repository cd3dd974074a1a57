use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A file failed validation; `field` names the offending header field or section.
    #[error("format error in `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("empty split: {0}")]
    EmptySplit(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}

pub(crate) fn format_err<T>(field: &str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Format {
        field: field.to_string(),
        message: msg.into(),
    })
}
