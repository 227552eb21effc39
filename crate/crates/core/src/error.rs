use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("no token reaches the minimum frequency {min_freq}")]
    EmptyVocabulary { min_freq: u64 },

    #[error("qrels reference unknown {kind} id `{id}`")]
    DanglingId { kind: &'static str, id: String },

    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },

    #[error("{kind} `{id}` is empty after normalization")]
    EmptyRecord { kind: &'static str, id: String },

    #[error("pair {pair_id}: {wanted} negatives requested but only {available} eligible tokens")]
    NegativePoolExhausted {
        pair_id: u64,
        wanted: usize,
        available: usize,
    },

    #[error("cannot train on an empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("scorer returned {value} for query `{query_id}`, expected a probability in [0, 1]")]
    ContractViolation { query_id: String, value: f64 },

    #[error("scoring query `{query_id}` against document `{doc_id}`: {source}")]
    Scoring {
        query_id: String,
        doc_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss is {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("config line {line}: key `{key}`: {message}")]
    Config {
        key: String,
        line: usize,
        message: String,
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
