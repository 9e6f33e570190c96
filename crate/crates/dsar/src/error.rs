//! Crate-wide error type.

use thiserror::Error;

/// Errors produced across the estimation and inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Shape mismatch between inputs (matrix/vector dimensions).
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A configuration value is out of range or inconsistent.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A noise/network model is not well defined (e.g. indefinite error covariance).
    #[error("invalid model: {0}")]
    InvalidModel(String),

    /// The response synthesizer failed to converge.
    #[error("response solver did not converge after {iterations} sweeps \
             (residual {residual:.3e}, spectral bound |rho|*max-row-sum = {spectral_bound:.6})")]
    ResponseSolver {
        iterations: usize,
        residual: f64,
        spectral_bound: f64,
    },

    /// The local Newton solver ran out of iterations.
    #[error("local solver did not converge after {iterations} iterations on worker {worker}: \
             grad inf-norm {grad_norm:.3e} at rho={last_rho:.6}")]
    SolverNonConvergence {
        worker: usize,
        iterations: usize,
        grad_norm: f64,
        last_rho: f64,
    },

    /// A Hessian required by a Newton step or an aggregation rule is numerically singular.
    #[error("singular Hessian in {context}{}", fmt_worker(.worker))]
    SingularHessian {
        context: &'static str,
        worker: Option<usize>,
    },

    /// Master-side combination of worker summaries failed.
    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// Inference packs disagree on protocol parameters (projection dim or seed).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// Projected covariance produced a negative variance estimate.
    #[error("negative variance estimate {value:.3e} for parameter {index} after projection \
             (d = {proj_dim}); increase the projection dimension")]
    NegativeVariance {
        index: usize,
        value: f64,
        proj_dim: usize,
    },

    /// A worker failed inside the simulated cluster.
    #[error("worker {worker} failed during {stage}: {source}")]
    WorkerFailure {
        worker: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    /// Malformed input data (edge lists, CSV columns, ids).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_worker(worker: &Option<usize>) -> String {
    match worker {
        Some(k) => format!(" on worker {k}"),
        None => String::new(),
    }
}

pub type Result<T> = std::result::Result<T, Error>;
