use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the event-prompt pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown event type `{0}`")]
    UnknownType(String),

    #[error("event type `{type_id}` is missing required field `{field}` for this prompt form")]
    MissingField {
        type_id: String,
        field: &'static str,
    },

    #[error("sentence `{sent_id}`: {message}")]
    Sentence { sent_id: String, message: String },

    #[error("sequence of {length} subtokens exceeds the maximum of {max} by {overflow}")]
    SequenceTooLong {
        length: usize,
        max: usize,
        overflow: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("novel type `{type_id}` has {available} novel-only sentences but {required} shots were requested")]
    InsufficientShots {
        type_id: String,
        available: usize,
        required: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the filesystem rather than by the data.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
