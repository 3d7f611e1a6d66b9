use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid value: {0}")]
    Value(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("corpus is empty after filtering ({0})")]
    EmptyCorpus(String),

    #[error("solver failure at iteration {iteration}, mode {mode}, element ({row}, {column}): {detail}")]
    Solver {
        iteration: usize,
        mode: String,
        row: usize,
        column: usize,
        detail: String,
    },

    #[error("non-finite objective at iteration {0}")]
    NonFiniteObjective(usize),

    #[error("invalid planted spec: {0}")]
    Spec(String),

    #[error("dense oracle refused: {cells} cells exceeds limit {limit}")]
    OracleTooLarge { cells: usize, limit: usize },

    #[error("{path}:{line}: {detail}")]
    Parse {
        path: PathBuf,
        line: usize,
        detail: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, detail: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            detail: detail.into(),
        }
    }
}
