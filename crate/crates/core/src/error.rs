use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty cloud")]
    EmptyCloud,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("empty seed set: {0}")]
    EmptySeedSet(String),

    #[error("no canopy found")]
    NoCanopy,

    #[error("no keypoints detected")]
    NoKeypoints,

    #[error("degenerate local reference frame")]
    DegenerateFrame,

    #[error("too few neighbors: {found} < {required}")]
    TooFewNeighbors { found: usize, required: usize },

    #[error("model fitting failed: {0}")]
    Fit(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("single class in training data")]
    SingleClass,

    #[error("model bundle missing: {0}")]
    MissingModel(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
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
}
