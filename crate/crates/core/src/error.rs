use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    /// One or more rows of an input file break the schema or the cohort
    /// invariants. Each entry names the file, the 1-based data row and the
    /// problem.
    #[error("invalid input data ({} problem(s)): {}", .0.len(), .0.join("; "))]
    InvalidData(Vec<String>),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no exposure in subinterval {subinterval}: total {model} is zero")]
    NoExposure {
        subinterval: usize,
        model: &'static str,
    },

    #[error("kernel window {kernel} does not match counting window {delta}")]
    KernelMismatch { kernel: u32, delta: u32 },

    #[error("mismatched subinterval counts: {0} vs {1}")]
    SubintervalMismatch(usize, usize),

    #[error("rating matrices have different scopes")]
    ScopeMismatch,

    #[error("ground truth has no positive pairs")]
    NoPositives,


    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
