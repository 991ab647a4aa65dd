//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed log line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("split fraction {fraction} selects no training records")]
    EmptySplit { fraction: f64 },

    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite value in {location}")]
    NonFinite { location: String },

    #[error("training failed at epoch {epoch}, step {step}: {message}")]
    Training {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
