use std::path::PathBuf;

/// Errors raised anywhere in the OOD pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Dataset file could not be ingested; `key` names the offending split.
    #[error("ingestion error in `{key}`: {message}")]
    Ingestion { key: String, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn ingestion(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Ingestion {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
