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

    #[error("{file} line {line}: malformed record: {message}")]
    MalformedLine {
        file: String,
        line: usize,
        message: String,
    },

    #[error("unknown concept {surface:?} referenced by {owner}")]
    UnknownConcept { owner: String, surface: String },

    #[error("duplicate concept surface {0:?} in vocabulary")]
    DuplicateConcept(String),

    #[error("duplicate {kind} id {id}")]
    DuplicateId { kind: &'static str, id: u32 },

    #[error("fact {fact}: {message}")]
    InvalidFact { fact: u32, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing hidden state for node {0}")]
    MissingHidden(usize),

    #[error("joint graph is empty")]
    EmptyGraph,

    #[error("degenerate normalization: concept scores sum to zero")]
    DegenerateNormalization,

    #[error("non-finite gradient in tensor {0}")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("synthetic generation: {0}")]
    Synthetic(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
