use thiserror::Error;

use crate::statistics::StatisticKind;

/// Errors produced by the detection library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A caller supplied arguments that violate an operation's preconditions
    /// (wrong dimensions, empty sets, out-of-range probabilities).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A data value fed to a recursion is unusable (non-finite or non-positive ratio).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// An estimator has no qualifying samples to average over.
    #[error("undefined result: {0}")]
    UndefinedResult(String),

    /// Only the Shiryaev statistic has a closed-form threshold in terms of alpha.
    #[error("threshold is not derivable from alpha for the {0} statistic")]
    NotDerivable(StatisticKind),

    /// Parameter-pair search could not hit the requested divergence.
    #[error("target KL {target} unreachable after {retries} directions")]
    Unreachable { target: f64, retries: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
