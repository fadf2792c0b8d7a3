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

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("duplicate record for question {qid:?} at fidelity {fidelity:?}")]
    DuplicateRecord { qid: String, fidelity: String },

    #[error("question {qid:?} appears with conflicting texts")]
    ConflictingQuestion { qid: String },

    #[error("need at least {needed} distinct questions for {needed}-fold split, found {found}")]
    TooFewQuestions { needed: usize, found: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown fidelity {0:?}")]
    UnknownFidelity(String),

    #[error("unknown question id {0:?}")]
    UnknownQuestion(String),

    #[error("unknown profile {0:?} (built-in profiles: edge-cloud, agentic-memory, cps-iot)")]
    UnknownProfile(String),

    #[error(
        "normalized costs are not strictly increasing: {prev:?} ({prev_cost}) >= {next:?} ({next_cost})"
    )]
    NonMonotoneCosts {
        prev: String,
        prev_cost: f64,
        next: String,
        next_cost: f64,
    },

    #[error("labels are all identical; temperature is unidentifiable, fall back to an isotonic or constant calibrator")]
    DegenerateLabels,

    #[error("no logged label for question {qid:?} at fidelity {fidelity:?}")]
    MissingLabel { qid: String, fidelity: String },

    #[error("fidelity {0:?} has no training records")]
    NoTrainingRecords(String),

    #[error("predictor bank levels {bank:?} do not match cost profile levels {profile:?}")]
    LevelMismatch { bank: Vec<String>, profile: Vec<String> },

    #[error("json error: {0}")]
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
