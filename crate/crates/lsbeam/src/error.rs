//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    InvalidToken { id: u32, vocab_size: usize },

    #[error(
        "target sequence is not complete: must end with a single EOS that appears nowhere else"
    )]
    IncompleteTarget,

    #[error("distribution has {got} entries but the vocabulary has {expected}")]
    DimensionMismatch { got: usize, expected: usize },

    #[error(
        "entry {value} at index {index} lies below the smoothing floor {floor}; \
         exact debiasing only applies to perfectly smoothed inputs, use rectify instead"
    )]
    BelowSmoothingFloor {
        index: usize,
        value: f64,
        floor: f64,
    },

    #[error("degenerate rectifier input: every entry is at or below delta = {delta}")]
    DegenerateRectify { delta: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("vocabulary too small for {task}: need at least {min} tokens, got {got}")]
    VocabTooSmall {
        task: String,
        min: usize,
        got: usize,
    },

    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: usize },

    #[error("{path}:{line}: {message}")]
    CorpusParse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("model file error: {0}")]
    ModelFile(String),

    #[error("no query produced a finished hypothesis")]
    NoFinishedHypotheses,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
