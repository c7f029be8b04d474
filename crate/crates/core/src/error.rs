use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to decode image {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty batch: {0}")]
    EmptyBatch(String),

    #[error("AUC undefined: {0}")]
    UndefinedAuc(String),

    #[error("embedding lookup failed: {0}")]
    Lookup(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite loss `{term}`; components: {dump}")]
    NonFiniteLoss { term: String, dump: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] candle_core::Error),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
