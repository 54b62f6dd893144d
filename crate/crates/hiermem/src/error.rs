//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape for {op}: {shape:?} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: Vec<usize>,
        detail: String,
    },

    #[error("axis {axis} out of range for shape {shape:?}")]
    InvalidAxis { axis: usize, shape: Vec<usize> },

    #[error("non-finite value in {op} input")]
    NonFiniteInput { op: &'static str },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("backward called on a tensor with no trainable ancestors")]
    DetachedGraph,

    #[error("backward already ran for this tensor; rebuild the graph first")]
    BackwardAlreadyRan,

    #[error("attention requires at least one key row")]
    EmptyKeys,

    #[error("memory readout requires a non-empty bank; first frame must bypass")]
    EmptyBank,

    #[error("frame index {frame} is not after the last stored index {last}")]
    NonMonotoneFrame { frame: usize, last: usize },

    #[error("feature stage mismatch at level {level}: expected {expected}, got {got}")]
    StageMismatch {
        level: usize,
        expected: &'static str,
        got: &'static str,
    },

    #[error("unknown interaction mode `{0}`")]
    UnknownMode(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("format error in {path}: {detail}")]
    Format { path: String, detail: String },

    #[error("mask values must be binary (0/1)")]
    NonBinaryMask,

    #[error("probabilities must lie in [0,1], got {0}")]
    ProbabilityOutOfRange(f64),

    #[error("gradient check failed: {failures} parameter(s) over tolerance")]
    GradCheckFailed { failures: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
