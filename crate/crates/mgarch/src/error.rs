//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by model construction, filtering, estimation and the
/// downstream tooling.
#[derive(Debug, Error)]
pub enum Error {
    /// Dimensions of two objects that must agree do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A value violates a documented invariant (non-finite entry, negative
    /// scale parameter, wrong triangular shape, ...).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Input data violates a precondition (empty panel, non-finite entry,
    /// too few observations).
    #[error("invalid data: {0}")]
    InvalidData(String),

    /// A matrix that must be symmetric positive (semi)definite is not.
    #[error("matrix not positive definite: {0}")]
    NotPositiveDefinite(String),

    /// A linear-algebra routine failed to converge or hit a degenerate case.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The sandwich Hessian is too ill-conditioned to invert.
    #[error("ill-conditioned Hessian (condition number {cond:.3e}): consider a reduced model (diagonal structure or fewer lags)")]
    IllConditioned {
        /// Estimated 2-norm condition number.
        cond: f64,
    },

    /// The optimizer failed on every start.
    #[error("optimization failed: {0}")]
    OptimizationFailed(String),

    /// An index is outside the filtered range.
    #[error("index out of bounds: {0}")]
    IndexOutOfBounds(String),
}

impl Error {
    /// Short machine-readable category used by the CLI for exit diagnostics.
    pub fn category(&self) -> &'static str {
        match self {
            Error::DimensionMismatch(_) => "dimension-mismatch",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::InvalidData(_) => "invalid-data",
            Error::NotPositiveDefinite(_) => "not-positive-definite",
            Error::Numerical(_) => "numerical",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::OptimizationFailed(_) => "optimization-failed",
            Error::IndexOutOfBounds(_) => "index-out-of-bounds",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
