use alloc::string::String;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A vector or matrix had the wrong shape.
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    /// The simulated state left the finite reals.
    NonFiniteState { env: &'static str, step: usize },
    /// A configuration field failed validation.
    InvalidConfig { key: &'static str, reason: String },
    /// A linear solve hit a matrix that is not positive definite.
    SingularSolve(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::DimensionMismatch {
                what,
                expected,
                found,
            } => write!(f, "{what}: expected dimension {expected}, found {found}"),
            Error::NonFiniteState { env, step } => {
                write!(f, "non-finite state in environment `{env}` at step {step}")
            }
            Error::InvalidConfig { key, reason } => write!(f, "invalid `{key}`: {reason}"),
            Error::SingularSolve(what) => write!(f, "singular system while solving {what}"),
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}
