use thiserror::Error;

use crate::estimator::VisitedTest;
use crate::scatter::{LocationVector, ScatterMatrix};

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("whitening impossible: scatter matrix is singular or near-singular (condition number {condition:.3e})")]
    WhiteningImpossible { condition: f64 },

    #[error("degenerate scatter: matrix lost positive definiteness at iteration {iteration}")]
    DegenerateScatter { iteration: usize },

    /// The fixed-point solver ran out of iterations. The last iterate is kept
    /// so callers can inspect how far it got.
    #[error("M-estimator did not converge after {iterations} iterations (residual {residual:.3e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last: Box<(LocationVector, ScatterMatrix)>,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("bootstrap aborted after {failures} replicate failures (last: {last})")]
    BootstrapAborted { failures: usize, last: Box<Error> },

    /// A test inside a sequential dimension estimate failed. `visited` holds
    /// the decisions made before the failure.
    #[error("test of H0 with k = {k} failed: {source}")]
    EstimationAborted {
        k: usize,
        visited: Vec<VisitedTest>,
        #[source]
        source: Box<Error>,
    },

    #[error("simulation aborted: {failures} of {attempted} repetitions failed")]
    TooManyFailures { failures: usize, attempted: usize },
}

impl Error {
    /// Stable short code used by front-ends to report the failure class.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "E_INPUT",
            Error::InvalidParameter(_) => "E_PARAM",
            Error::WhiteningImpossible { .. } => "E_WHITEN",
            Error::DegenerateScatter { .. } => "E_DEGENERATE",
            Error::NonConvergence { .. } => "E_CONVERGE",
            Error::DimensionMismatch { .. } => "E_DIMENSION",
            Error::BootstrapAborted { .. } => "E_BOOTSTRAP",
            Error::EstimationAborted { .. } => "E_ESTIMATE",
            Error::TooManyFailures { .. } => "E_SIMULATION",
        }
    }
}
