use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed activation stream or CoF export; `offset` is the byte offset
    /// of the offending record (or line start for CSV input).
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: u64, message: String },

    /// Caller violated an operation's contract (wrong store, bad parameter).
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data is inconsistent or insufficient for the requested computation.
    #[error("data error: {0}")]
    Data(String),

    #[error("insufficient rank, reduce k (requested {requested}, data rank {rank})")]
    InsufficientRank { requested: usize, rank: usize },

    #[error("image error in {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("missing upstream output {path}: run `facetscope {command}` first")]
    MissingUpstream {
        path: PathBuf,
        command: &'static str,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(offset: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            offset,
            message: message.into(),
        }
    }

    pub(crate) fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub(crate) fn data(message: impl Into<String>) -> Self {
        Error::Data(message.into())
    }
}
