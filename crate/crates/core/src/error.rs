use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("invalid template syntax at byte {offset}: {reason}")]
    TemplateSyntax { offset: usize, reason: String },
    #[error("template is not LL(1): {0}")]
    NotLl1(String),
    #[error("{count} candidate characters present; exhaustive search is capped at {max}, use greedy search")]
    TooManyCandidates { count: usize, max: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("op #{index} ({op}): {reason}")]
    RelOp {
        index: usize,
        op: String,
        reason: String,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid synthetic spec: {0}")]
    Synth(String),
}
