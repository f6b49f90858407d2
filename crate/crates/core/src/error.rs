use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error("manifest line {line}: {message}")]
    Manifest { line: u64, message: String },

    #[error("manifest row `{row}` references missing audio file {path}")]
    MissingAudio { row: String, path: PathBuf },

    #[error("cannot decode WAVE file {path}: {message}")]
    Wav { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("caption is empty after normalization")]
    EmptyCaption,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("LLM request failed: {0}")]
    Llm(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("non-finite loss at step {step}; diagnostic snapshot written to {snapshot}")]
    NonFiniteLoss { step: usize, snapshot: PathBuf },

    #[error("metric plugin `{name}`: {message}")]
    Plugin { name: String, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
