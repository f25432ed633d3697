//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A numeric precondition failed (NaN/Inf input, divergent training).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Invalid configuration: bad hyperparameters, unsupported loss/activation
    /// pairing, a pruning schedule that does not fit the training run.
    #[error("configuration error: {0}")]
    Config(String),

    /// A step index that is not a pruning event of the schedule.
    #[error("step {step} is not in the pruning schedule")]
    OutOfSchedule { step: usize },

    /// Invalid argument to an operation (e.g. k larger than the pool).
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Every training job of a pool failed.
    #[error("pool generation failed: {0}")]
    Pool(String),

    /// A stored artifact failed validation (bad payload length, hash
    /// mismatch, COO inconsistency, mask/weight disagreement).
    #[error("corrupt file: {0}")]
    Corrupt(String),

    /// Unknown on-disk format version.
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    /// A wire frame violated the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A worker node did not answer within the deadline.
    #[error("node timeout: {0}")]
    NodeTimeout(String),

    /// Master and worker hold different dataset shards.
    #[error("dataset shard mismatch: {0}")]
    ShardMismatch(String),

    /// A predict request referenced a sample outside the shard.
    #[error("bad sample index: {0}")]
    BadIndex(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable error-class code, used by the CLI as its process exit code.
    pub fn code(&self) -> i32 {
        match self {
            Error::Shape(_)
            | Error::Numeric(_)
            | Error::Config(_)
            | Error::OutOfSchedule { .. }
            | Error::Parameter(_) => 10,
            Error::Io(_) => 11,
            Error::Corrupt(_) => 12,
            Error::Version { .. } => 13,
            Error::ShardMismatch(_) => 14,
            Error::NodeTimeout(_) => 15,
            Error::Protocol(_) => 16,
            Error::BadIndex(_) => 17,
            Error::Pool(_) => 18,
            Error::Json(_) => 19,
        }
    }
}
