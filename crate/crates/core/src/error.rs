use thiserror::Error;

use crate::machine::State;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("cannot parse state text {text:?}: {reason}")]
    Parse { text: String, reason: String },

    #[error("2-adic valuation of zero is undefined")]
    ZeroValuation,

    #[error("fixed-width arithmetic would wrap in {0}")]
    Overflow(&'static str),

    #[error("state length {0} exceeds the 64-digit Gray decode width")]
    TooLong(usize),

    #[error("index {index} out of range for a state with ell = {ell}")]
    IndexOutOfRange { index: usize, ell: usize },

    #[error("precondition failed: {0}")]
    Precondition(String),

    /// A state shape that the rule system should never produce.
    #[error("unreachable configuration ({what}) at {state}")]
    Unreachable { what: &'static str, state: State },

    /// The process halted. Reaching this from any S_k falsifies nonhalting.
    #[error("HALT reached at {state}")]
    Halted { state: State },

    /// A rooted cursor left the weak-embankment region.
    #[error("weak embankment bounds violated at {state}")]
    BoundsViolation { state: State },

    #[error("check {check} failed: expected {expected}, got {actual}")]
    CheckFailed {
        check: String,
        expected: String,
        actual: String,
    },
}

impl Error {
    pub(crate) fn check(check: impl Into<String>, expected: impl ToString, actual: impl ToString) -> Self {
        Error::CheckFailed {
            check: check.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}

/// Returns `Err(CheckFailed)` unless `expected == actual`.
pub(crate) fn ensure_eq<T: PartialEq + std::fmt::Debug>(check: &str, expected: &T, actual: &T) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::check(check, format!("{expected:?}"), format!("{actual:?}")))
    }
}
