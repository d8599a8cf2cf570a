//! Certified evaluation of Riemann theta functions with characteristics,
//! θ_{a,b}(z, τ), and their partial derivatives, in any dimension g, to any
//! precision, with rigorous error bounds.
//!
//! All numerical results are *balls*: exact dyadic midpoints plus radii that
//! provably contain the true value. The crate provides:
//!
//! - ball arithmetic over arbitrary-precision floats ([`ball`]),
//! - Siegel reduction of the period matrix and argument reduction ([`siegel`]),
//! - the theta transformation formula under the symplectic group ([`transform`]),
//! - lattice-point enclosures and certified tail bounds ([`geometry`]),
//! - rigorous partial summation of the defining series ([`sum`]),
//! - a quasi-linear (in the bit precision) evaluation pipeline based on
//!   duplication formulas ([`ql`]),
//! - derivatives of any order via certified finite differences ([`deriv`]),
//! - a small command-line interface ([`cli`]).
//!
//! The entry points most users want are [`ql::theta_all`] /
//! [`ql::theta_one`] for values and [`deriv::jet_all`] for derivatives.

use std::fmt;

pub mod ball;
pub mod cli;
pub mod geometry;
pub mod mat;
pub mod ql;
pub mod siegel;
pub mod sum;
pub mod transform;
pub mod zmat;

/// Errors reported by fallible operations.
///
/// Most evaluation routines are total on their documented domains; these
/// variants surface genuine mathematical obstructions (a matrix that is not
/// positive definite, a square root whose sign cannot be decided, …) or
/// resource limits, never silent wrong answers.
#[derive(Debug, Clone)]
pub enum Error {
    /// Cholesky decomposition failed: the matrix is not (provably) positive definite.
    NotPositiveDefinite,
    /// The symplectic cocycle γτ + δ is singular at this point.
    SingularCocycle,
    /// Iterative reduction failed to reach the requested tolerance at the precision cap.
    ToleranceExceeded,
    /// A square-root branch could not be decided against the hint.
    AmbiguousRoot,
    /// Inversion (or negative power) of a ball containing zero.
    DivisionByZeroBall,
    /// Input outside the documented domain of the operation.
    OutOfDomain(String),
    /// A certified root-isolation path passed through a root.
    PathThroughRoot,
    /// Requested derivative order exceeds the computed jet.
    MissingOrder,
    /// Malformed textual input.
    Parse(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NotPositiveDefinite => write!(f, "matrix is not positive definite"),
            Error::SingularCocycle => write!(f, "symplectic cocycle γτ+δ is singular"),
            Error::ToleranceExceeded => write!(f, "reduction tolerance not reached at precision cap"),
            Error::AmbiguousRoot => write!(f, "square-root branch is ambiguous"),
            Error::DivisionByZeroBall => write!(f, "division by a ball containing zero"),
            Error::OutOfDomain(s) => write!(f, "out of domain: {s}"),
            Error::PathThroughRoot => write!(f, "root-isolation path passes through a root"),
            Error::MissingOrder => write!(f, "derivative order not present in computed jet"),
            Error::Parse(s) => write!(f, "parse error: {s}"),
        }
    }
}

impl std::error::Error for Error {}

/// Crate-wide diagnostic log level, controlled by the `THETA_LOG` environment
/// variable (0 = silent, 1 = milestones, 2 = verbose).
pub(crate) fn log_level() -> u8 {
    use std::sync::OnceLock;
    static LEVEL: OnceLock<u8> = OnceLock::new();
    *LEVEL.get_or_init(|| {
        std::env::var("THETA_LOG")
            .ok()
            .and_then(|s| s.trim().parse::<u8>().ok())
            .unwrap_or(0)
    })
}

macro_rules! trace {
    ($lvl:expr, $($arg:tt)*) => {
        if crate::log_level() >= $lvl {
            eprintln!("[theta] {}", format_args!($($arg)*));
        }
    };
}
pub(crate) use trace;
