//! Error type shared by the fallible operations of this crate.

use core::fmt;

/// Failures reported by the core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// The reference velocity vanishes, so the flat heading is undefined.
    HeadingUndefined,
    /// The polar distance is inside the dead zone where the error dynamics are singular.
    IllConditioned {
        /// Offending polar distance (m).
        rho: f64,
    },
    /// The tube radius denominator `α1 − Z⊥ τ e^{l_V τ}` is not positive.
    TubeBlowUp {
        /// Value of the denominator.
        denominator: f64,
    },
    /// Fewer training tuples than the requested subsample size.
    InsufficientData {
        /// Samples needed.
        required: usize,
        /// Samples available.
        available: usize,
    },
    /// A parameter is outside its valid range.
    InvalidParameter(&'static str),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::HeadingUndefined => write!(f, "heading undefined: reference velocity is zero"),
            Error::IllConditioned { rho } => {
                write!(f, "ill-conditioned polar error: rho = {rho} is inside the dead zone")
            }
            Error::TubeBlowUp { denominator } => {
                write!(f, "tube blow-up: radius denominator {denominator} is not positive")
            }
            Error::InsufficientData { required, available } => write!(
                f,
                "insufficient data: {required} samples required, {available} available"
            ),
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}
