use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AifError {
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("support mismatch: {left} vs {right}")]
    SupportMismatch { left: usize, right: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch {
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("digamma is undefined for x = {0}")]
    Domain(f64),

    #[error("Dirichlet counts must be positive, found {value} at ({row}, {col})")]
    NonPositiveCount { row: usize, col: usize, value: f64 },

    #[error("not a probability vector: {0}")]
    NotSimplex(String),

    #[error("unknown layout `{name}` (valid layouts: {valid})")]
    UnknownLayout { name: String, valid: String },

    #[error("unknown preference location `{0}` (valid: all_goal)")]
    UnknownPreference(String),

    #[error("episode already finished at step {0}")]
    EpisodeFinished(usize),

    #[error("requested {limit} policies but only {available} exist")]
    PolicyLimit { limit: usize, available: usize },

    #[error("index {index} out of range for size {size}")]
    OutOfRange { index: usize, size: usize },

    #[error("time step {t} is invalid here: {reason}")]
    BadTimeStep { t: usize, reason: &'static str },

    #[error("empty policy set")]
    NoPolicies,

    #[error("unknown action selection mode `{0}` (valid: kd, greedy_max, greedy_sample)")]
    UnknownSelection(String),

    #[error("enumeration too large: {0} state sequences (limit 256)")]
    TooLarge(usize),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing metric file {0}")]
    MissingMetric(PathBuf),

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

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = AifError> = std::result::Result<T, E>;
