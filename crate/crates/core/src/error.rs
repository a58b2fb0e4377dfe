use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch, expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        op: &'static str,
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("{0}: matrix is singular")]
    Singular(&'static str),

    #[error("{what}: not positive definite (min eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { what: String, min_eigenvalue: f64 },

    #[error("not Schur stable: spectral radius {spectral_radius} >= 1")]
    NotSchurStable { spectral_radius: f64 },

    #[error("communication topology is not connected")]
    Disconnected,

    #[error("invalid consensus matrix: {0}")]
    InvalidConsensus(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("equal-start assumption violated: previous-step indices differ by {gap:e}")]
    UnequalStart { gap: f64 },

    #[error("{what}: no convergence after {iterations} iterations (last step {last_step:e}, detectable: {detectable})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        last_step: f64,
        detectable: bool,
    },

    #[error("non-finite values in Monte-Carlo run {run}")]
    NonFinite { run: usize },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
