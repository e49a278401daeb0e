use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: missing column `{column}`")]
    Schema { path: PathBuf, column: String },

    #[error("{path}: row {row}: {message}")]
    Data {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: no data rows")]
    EmptyCorpus { path: PathBuf },

    #[error("cannot split a corpus of {len} document(s); need at least 2")]
    DegenerateSplit { len: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("shape mismatch: {left:?} vs {right:?} ({op})")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    Index { id: usize, vocab_size: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in `{name}`")]
    NonFinite { name: String },

    #[error("checkpoint integrity check failed: {0}")]
    Integrity(String),

    #[error("unsupported checkpoint format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("incompatible artifacts: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
}
