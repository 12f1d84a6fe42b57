use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at position {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index error: {0}")]
    Index(String),

    #[error("class {class}: need {needed} examples but only {available} available (short by {})", needed - available)]
    Insufficient {
        class: usize,
        needed: usize,
        available: usize,
    },

    #[error("checkpoint field `{field}`: {message}")]
    Checkpoint { field: String, message: String },

    #[error("ingestion error at byte offset {offset}: {message}")]
    Ingest { offset: u64, message: String },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
