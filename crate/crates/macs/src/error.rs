//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Matrix or vector dimensions do not match.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A scalar argument is outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The gain level makes the inner adversary maximum infinite.
    #[error("degenerate gain level: {0}")]
    DegenerateGain(String),

    /// A matrix required to be positive definite is singular or indefinite.
    /// Carries a witness direction along which definiteness fails.
    #[error("indefiniteness: {message} (witness direction {witness:?})")]
    Indefiniteness { message: String, witness: Vec<f64> },

    /// A value cone is empty or violates its containment invariant.
    #[error("invalid cone: {0}")]
    InvalidCone(String),

    /// The randomized-decision objective is unbounded below.
    /// Carries the certificate direction.
    #[error("objective unbounded below along direction {direction:?}")]
    Unbounded { direction: Vec<f64> },

    /// A moment pair (mu, W) is not realizable by any probability law.
    #[error("unrealizable moments: {0}")]
    Realizability(String),

    /// decide/observe called out of order.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Invalid search, sampler, or run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// The cone expansion hit its vertex budget without certifying.
    #[error("cone expansion diverged: {0}")]
    ExpansionDiverged(String),

    /// The discretization is too coarse for the requested accuracy.
    #[error("accuracy error: {0}")]
    Accuracy(String),

    /// Operation not supported at these dimensions or horizons.
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Malformed input file.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },

    /// File I/O failure.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
