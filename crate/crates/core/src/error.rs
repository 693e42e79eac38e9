use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
///
/// Variants fall into two families: input/validation problems (bad shapes,
/// missing files, malformed CSV) and numerical failures (singular systems,
/// non-finite values). [`Error::is_numerical`] tells them apart, which the
/// CLI uses to pick its exit code.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("grid mismatch: functions are sampled on different grids")]
    GridMismatch,

    #[error("empty dataset")]
    EmptyDataset,

    #[error("value {value} outside the allowed domain {domain}")]
    OutOfDomain { value: f64, domain: &'static str },

    #[error("too few observations: need at least {needed}, found {found}")]
    TooFewObservations { needed: usize, found: usize },

    #[error("zero variance sample")]
    ZeroVariance,

    #[error("degenerate {0} distances")]
    DegenerateDistances(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear system is not positive definite")]
    NotPositiveDefinite,

    #[error("problem of size {n} exceeds the dense solver limit of {limit}; subsample the dataset")]
    TooLarge { n: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_) | Error::NotPositiveDefinite | Error::DegenerateDistances(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
