use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid treatment entry {0}: combinations must be -1 or +1")]
    InvalidTreatment(i64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value while processing sample {sample}")]
    NonFinite { sample: usize },

    #[error("training diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("surrogate training is only defined for Hamming order 1, got tau = {0}")]
    SurrogateOrder(usize),

    #[error("tau = {tau} out of range for K = {k}")]
    TauOutOfRange { tau: usize, k: usize },

    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),

    #[error("K = {0} too large for exhaustive enumeration (max 16)")]
    TooManyLabels(usize),

    #[error("no pairwise classifier could be trained")]
    NoTrainablePairs,

    #[error("label {label} at point {point} has no outcome mass on either side")]
    DegenerateLabel { point: usize, label: usize },

    #[error("instance too large for exhaustive rule search")]
    SearchTooLarge,

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
