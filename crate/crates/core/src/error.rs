use alloc::string::String;

/// Every failure the core can report.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("invalid features: {0}")]
    InvalidFeatures(String),
    #[error("sequence of length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("top-k value {k} out of range 1..={n}")]
    InvalidK { k: usize, n: usize },
    #[error("non-finite value in {0}")]
    NumericError(&'static str),
    #[error("model already has sparse feed-forward layers")]
    AlreadySparse,
    #[error("no tokens routed")]
    EmptyBatch,
    #[error("label {label} outside vocabulary of size {vocab}")]
    InvalidLabel { label: u32, vocab: usize },
    #[error("shape mismatch: {0}")]
    ShapeError(String),
    #[error("response mask selects no positions")]
    EmptyResponse,
    #[error("beta must be positive, got {0}")]
    InvalidBeta(f64),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(&'static str),
    #[error("stage order error: {0}")]
    StageOrderError(String),
    #[error("teacher model is required but unavailable")]
    TeacherUnavailable,
    #[error("teacher reached accuracy {accuracy:.4} after {steps} steps, below {target}")]
    TeacherTrainingFailed { accuracy: f64, steps: usize, target: f64 },
    #[error("invalid task mix: {0}")]
    InvalidMix(String),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
