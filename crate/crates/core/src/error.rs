//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("corpus manifest not found: {0}")]
    MissingManifest(PathBuf),

    #[error("malformed JSON at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("dangling references in reports [{}]: {details}", report_ids.join(", "))]
    DanglingReference {
        report_ids: Vec<String>,
        details: String,
    },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("invalid corpus entity: {0}")]
    Validation(String),

    #[error("not enough data: {0}")]
    InsufficientData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("snapshot has no files")]
    EmptySnapshot,

    #[error("report {report_id} has no tokens; similarity undefined")]
    UndefinedSimilarity { report_id: String },

    #[error("candidate set is empty")]
    EmptyCandidates,

    #[error("training rows contain a single class")]
    DegenerateLabels,

    #[error("embedding dimension mismatch for {id}: expected {expected}, found {found}")]
    DimensionMismatch {
        id: String,
        expected: usize,
        found: usize,
    },

    #[error("no embedding for {0}")]
    MissingEmbedding(String),

    #[error("episode has no candidate rows")]
    EmptyEpisode,

    #[error("illegal action {action}: out of range or already picked")]
    IllegalAction { action: usize },

    #[error("forward pass on a terminal state")]
    TerminalState,

    #[error("non-finite value at step {step}: {detail}")]
    Numerics { step: usize, detail: String },

    #[error("no gate-positive training reports")]
    NothingToTrain,

    #[error("no results to evaluate")]
    EmptyEval,

    #[error("unknown report id: {0}")]
    UnknownReport(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("pipeline stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Error {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
