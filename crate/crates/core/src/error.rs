use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid attention tensor: {0}")]
    InvalidTensor(String),

    #[error("no eligible tokens to select from")]
    NoEligibleTokens,

    #[error("missing attention tensor for passage `{0}`")]
    MissingTensor(String),

    /// Remote scorer unreachable after all retries. Carries the ids of the failed batch so
    /// the caller can resubmit exactly that work.
    #[error("scorer unavailable after {attempts} attempts ({message}); failed batch: {batch:?}")]
    ScorerUnavailable {
        batch: Vec<String>,
        attempts: u32,
        message: String,
    },

    #[error("scoring protocol error: {0}")]
    Protocol(String),

    #[error("non-finite score: {0}")]
    NonFinite(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether retrying the same request could succeed.
    pub fn is_retriable(&self) -> bool {
        match self {
            Error::ScorerUnavailable { .. } => true,
            Error::Stage { source, .. } => source.is_retriable(),
            _ => false,
        }
    }
}
