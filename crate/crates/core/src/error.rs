//! Error type shared by the numerical core.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a documented precondition.
    InvalidInput(String),
    /// `exp(-2*pi/(gamma*eps^2))` is not representable as a positive double.
    RadiusUnderflow { epsilon: f64, gamma: f64 },
    /// Fewer than the required number of grid cells per fiber radius.
    Unresolved { radius: f64, h: f64, cells_per_radius: f64 },
    /// The iterative solver stopped before reaching the requested tolerance.
    NotConverged { iterations: usize, residual_history: Vec<f64> },
    /// The assembled operator failed a symmetry or positivity probe.
    NotPositiveDefinite(String),
    /// A value overflows `f64`; `scaled` holds `value * exp(-exponent)`.
    Overflow { scaled: f64, exponent: f64 },
    /// A defect does not lie inside the admissible buffer.
    DefectOutsideBuffer(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::RadiusUnderflow { epsilon, gamma } => write!(
                f,
                "fiber radius underflows for epsilon={epsilon}, gamma={gamma}"
            ),
            Error::Unresolved { radius, h, cells_per_radius } => write!(
                f,
                "fiber radius {radius} resolved by only {cells_per_radius:.2} cells (h={h})"
            ),
            Error::NotConverged { iterations, residual_history } => write!(
                f,
                "solver did not converge after {iterations} iterations (last residual {:e})",
                residual_history.last().copied().unwrap_or(f64::NAN)
            ),
            Error::NotPositiveDefinite(msg) => write!(f, "operator is not SPD: {msg}"),
            Error::Overflow { scaled, exponent } => {
                write!(f, "overflow: value = {scaled:e} * exp({exponent})")
            }
            Error::DefectOutsideBuffer(msg) => write!(f, "defect outside buffer: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
