use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Usage(String),

    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("target column not found: {0}")]
    TargetNotFound(String),

    #[error("row {row}, column {column}: cannot parse {value:?} as a number")]
    Unparseable {
        row: usize,
        column: String,
        value: String,
    },

    #[error("row {row}, column {column}: missing value")]
    Missing { row: usize, column: String },

    #[error("schema mismatch: {0}")]
    Schema(String),

    #[error("constant response")]
    ConstantResponse,

    #[error("log transform requested but the response has nonpositive values")]
    NonPositiveResponse,

    #[error("invalid data: {0}")]
    Data(String),

    #[error("model file: {0}")]
    ModelFile(String),

    #[error("Cholesky factorization failed at iteration {iteration}")]
    NotPositiveDefinite { iteration: usize },

    #[error("coordinate descent did not converge within {cap} sweeps")]
    NoConvergence { cap: usize },

    #[error("numerical failure: {0}")]
    Numeric(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::NotPositiveDefinite { .. } | Error::NoConvergence { .. } | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Error {
    Error::Usage(msg.into())
}
