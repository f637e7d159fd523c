//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by geometry construction, simulation, solvers and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// Array geometry violates its invariants (N >= 2, wavelength > 0, finite positions).
    #[error("invalid geometry: {0}")]
    Geometry(String),
    /// Incompatible matrix/vector dimensions between inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A matrix required to be Hermitian is not, beyond tolerance.
    #[error("matrix is not Hermitian: max asymmetry {max_asymmetry:.3e} exceeds tolerance {tolerance:.3e}")]
    NotHermitian { max_asymmetry: f64, tolerance: f64 },
    /// A scalar parameter is outside its mathematical domain.
    #[error("parameter out of domain: {0}")]
    Domain(String),
    /// A covariance that must be positive definite failed to factorize.
    #[error("covariance matrix is singular or not positive definite")]
    Singular,
    /// A solver invariant was violated at runtime (numerical breakdown).
    #[error("solver invariant violated: {0}")]
    Invariant(String),
    /// Invalid experiment configuration.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Every realization of a batch aborted on a numerical failure.
    #[error("every realization aborted: {0}")]
    AllAborted(String),
    /// Malformed input data (snapshot files, geometry files).
    #[error("malformed input: {0}")]
    Parse(String),
    /// Unrecognized figure name passed to the reproduction entry point.
    #[error("unknown figure name: {0} (expected fig1..fig8)")]
    UnknownFigure(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
