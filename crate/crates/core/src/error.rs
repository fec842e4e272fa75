use alloc::boxed::Box;
use alloc::string::String;

/// Failures raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("numeric failure at iteration {iteration}: {reason}")]
    NumericFailure { iteration: usize, reason: String },

    #[error("numeric failure in fitting stage {stage}: {reason}")]
    StageFailure { stage: usize, reason: String },

    #[error("registration of training instance {index} failed: {source}")]
    Registration { index: usize, source: Box<Error> },

    #[error("degenerate view: {0}")]
    DegenerateView(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
