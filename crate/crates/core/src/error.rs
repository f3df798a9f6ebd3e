//! Crate-wide error type.
//!
//! Numerical routines distinguish *invalid input* (caller mistakes: mismatched
//! meshes, out-of-range parameters) from *numerical failure* (a solver ran out
//! of iterations or a matrix turned out singular). CLI exit codes key on this
//! split, so keep new variants in the right bucket.

use thiserror::Error;

/// All errors produced by this crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed or out-of-contract input (caller mistake).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands that must share a mesh/box/dimension do not.
    #[error("incompatible operands: {0}")]
    Incompatible(String),

    /// The exponent has no declared limit value at infinity, but an
    /// at-infinity quantity was requested.
    #[error("no limit value: exponent has no value at infinity")]
    NoLimitValue,

    /// Conjugate exponent requested for p with p_minus <= 1.
    #[error("conjugate undefined (would be infinite)")]
    ConjugateUndefined,

    /// An iterative solver failed to converge; the message carries the state
    /// (for bisection: the final bracket).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A matrix that must be invertible / positive definite is not.
    #[error("matrix not invertible or not positive definite: {0}")]
    Singular(String),

    /// A molecule check needed derivative fields that were not supplied.
    #[error("missing derivative fields of order {0}")]
    MissingDerivatives(usize),

    /// Every (cube, dilation) pair fell outside the base box, so no estimate
    /// could be formed.
    #[error("all pairs skipped: {0}")]
    AllPairsSkipped(String),

    /// I/O failure during (de)serialization.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed serialized data.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
