use thiserror::Error;

/// Errors produced by the solvers, generators, and the sweep harness.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or parameter set.
    #[error("configuration: {0}")]
    Config(String),

    /// API misuse: dimension mismatch, empty input, and the like.
    #[error("usage: {0}")]
    Usage(String),

    /// Arguments outside the mathematical domain of a formula.
    #[error("domain: {0}")]
    Domain(String),

    /// The Wishart matrix is singular or indefinite (pivot ratio below
    /// threshold, or the factorization failed outright).
    #[error("near-singular matrix: {0}")]
    NearSingular(String),

    /// Steepest descent hit the iteration cap; carries the last state.
    #[error(
        "descent did not converge: {} iterations, residual {:.3e}",
        .state.iteration,
        .state.residual
    )]
    NonConvergence { state: Box<crate::descent::DescentState> },

    /// A descent update produced a non-finite component.
    #[error("descent diverged at iteration {iteration}: non-finite update")]
    Divergence { iteration: u64 },

    /// More than the tolerated fraction of sweep cells failed.
    #[error("sweep aborted: {failed} of {total} cells failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
