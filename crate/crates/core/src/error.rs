use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is rank deficient: column {column} collapsed during orthogonalization")]
    RankDeficient { column: usize },
    #[error("iterative diagonalization did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("matrix is singular: smallest singular value {sigma_min:e}")]
    Singular { sigma_min: f64 },
    #[error("frame does not have orthonormal columns (max deviation {deviation:e})")]
    NotOrthonormal { deviation: f64 },
    #[error("norm order must be an even integer >= 2, got {0}")]
    BadOrder(u32),
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("stream {0} contains no data rows")]
    EmptyStream(PathBuf),
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("invalid value for `{key}`: {msg}")]
    Validation { key: String, msg: String },
    #[error("step {iteration} failed: {source}")]
    Step {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub(crate) fn validation(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn at_step(self, iteration: usize) -> Self {
        Error::Step {
            iteration,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
