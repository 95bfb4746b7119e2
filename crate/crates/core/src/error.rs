use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: row {row}, column {column:?}: {message}")]
    Ingestion {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("labels must contain both classes")]
    SingleClass,
    #[error("one-class SVM did not converge after {iterations} iterations (gap {gap:.3e}, tolerance {tolerance:.1e})")]
    SvmNonConvergence {
        iterations: usize,
        gap: f64,
        tolerance: f64,
    },
    #[error("{penalty} logistic regression did not converge after {iterations} iterations (gradient norm {grad_norm:.3e})")]
    LogRegNonConvergence {
        penalty: &'static str,
        iterations: usize,
        grad_norm: f64,
    },
    #[error("detector {spec}: {source}")]
    Detector {
        spec: String,
        #[source]
        source: Box<Error>,
    },
    #[error("no TOS produced: every detector spec was skipped")]
    NoTosProduced,
    #[error("invalid detector spec {0:?}")]
    SpecParse(String),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
