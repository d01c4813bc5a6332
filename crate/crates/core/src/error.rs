use std::path::PathBuf;

use thiserror::Error;

use crate::oracle::OracleError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{origin}:{line}: {message}")]
    Parse {
        origin: String,
        line: usize,
        message: String,
    },

    #[error("sentence `{sentence}`: {message}")]
    InvalidSentence { sentence: String, message: String },

    #[error("sentence `{0}`: dependency graph contains a cycle")]
    CyclicDependency(String),

    #[error("invalid rule: {0}")]
    Rule(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Oracle(#[from] OracleError),

    #[error("no negative (NA) instances available; lower the thresholds or widen the NA sampling")]
    NoNegatives,

    #[error("instance pool is empty")]
    EmptyPool,

    #[error("snapshot {}: {message}", path.display())]
    Snapshot { path: PathBuf, message: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Errors that stem from user input rather than from a failed run.
    pub fn is_validation(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
