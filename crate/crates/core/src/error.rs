use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line-count mismatch: {path} has {found} lines, expected {expected}")]
    Alignment {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("parse error at {location} line {line}: {message}")]
    Parse {
        location: String,
        line: usize,
        message: String,
    },

    #[error("invalid sentence: {0}")]
    InvalidSentence(String),

    #[error("unknown corpus id `{0}`")]
    UnknownCorpus(String),

    #[error("malformed segmentation: {0}")]
    MalformedSegmentation(String),

    #[error("language model estimation failed: {0}")]
    Estimation(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("training diverged at batch {batch}: {message}")]
    Divergence { batch: usize, message: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("gradient check failed: {0}")]
    GradientCheck(String),

    #[error("decoder assembly failed: {0}")]
    Assembly(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            line,
            message: message.into(),
        }
    }
}
