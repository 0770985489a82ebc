use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("degenerate noise level: {0}")]
    DegenerateNoiseLevel(String),
    #[error("invalid probability distribution at row {row}: {reason}")]
    InvalidDistribution { row: usize, reason: String },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e})")]
    NotPositiveSemidefinite { eigenvalue: f64 },
    #[error("rejection sampling gave up after {attempts} attempts: {what}")]
    RejectionLimit { attempts: usize, what: &'static str },
    #[error("codec failure: {0}")]
    Codec(String),
    #[error("non-finite loss {loss} at step {step}")]
    NonFiniteLoss { step: u64, loss: f64 },
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Debug, got: impl core::fmt::Debug) -> Self {
        Error::ShapeMismatch {
            expected: alloc::format!("{expected:?}"),
            got: alloc::format!("{got:?}"),
        }
    }
}
