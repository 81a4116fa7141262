use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A CoNLL-U line could not be read.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: duplicate token id {id}")]
    DuplicateId { line: usize, id: usize },

    #[error("sentence {sentence}: {message}")]
    InvalidTree { sentence: String, message: String },

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("label `{label}` was not seen in training data for head {head}")]
    UnseenLabel { head: usize, label: String },

    #[error("no spanning arborescence: {0}")]
    NoArborescence(String),

    #[error("sentence {sentence}: {message}")]
    Mismatch { sentence: String, message: String },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
