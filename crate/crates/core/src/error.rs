use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}:{line}: {message}")]
    Parse {
        source_name: String,
        line: usize,
        message: String,
    },

    #[error("unknown pair format `{0}` (expected quora-tsv, askubuntu or paralex)")]
    UnknownFormat(String),

    #[error("corpus statistics are empty (num_docs = 0)")]
    UnbuiltStatistics,

    #[error("token id {id} out of range for a table with {rows} rows")]
    IdOutOfRange { id: usize, rows: usize },

    #[error("length mismatch for {what}: expected {expected}, got {actual}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("batch of size {0} has no in-batch negatives")]
    InsufficientNegatives(usize),

    #[error("no training pairs")]
    EmptyPairs,

    #[error("non-finite gradient at step {step}")]
    Divergence { step: usize },

    #[error("no positive pairs to build a retrieval task from")]
    NoPositivePairs,

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("unknown document id `{0}`")]
    UnknownDoc(String),

    #[error("unknown task `{0}`")]
    UnknownTask(String),

    #[error("{} queries have no ranking: {}", .0.len(), preview(.0))]
    MissingQueries(Vec<String>),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(source_name: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            source_name: source_name.into(),
            line,
            message: message.into(),
        }
    }
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 10;
    let mut out = ids.iter().take(SHOWN).cloned().collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        out.push_str(", ...");
    }
    out
}
