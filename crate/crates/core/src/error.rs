use thiserror::Error;

/// Errors raised by the solvers, flows and experiment drivers.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("linear solve failed: {0}")]
    SolveFailed(String),

    #[error("symmetric eigensolver did not converge")]
    EigFailed,

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("adaptive quadrature exceeded depth limit on [{a}, {b}]")]
    QuadratureFailed { a: f64, b: f64 },

    #[error("missing problem constant: {0}")]
    MissingConstants(&'static str),

    #[error("trajectory is missing monitor data: {0}")]
    MissingMonitor(&'static str),

    #[error("condition violated: {0}")]
    ConditionViolated(String),

    #[error("comparison precondition fails at t={t}, w={w}, u={u}: f(t,w)={f} > g(t,u)={g}")]
    PreconditionSampleFailed { t: f64, w: f64, u: f64, f: f64, g: f64 },

    #[error("division by zero: {0}")]
    DivisionByZero(&'static str),

    #[error("no concave solution found for z={z}")]
    NoConcaveSolution { z: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64], context: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(context.to_string()))
    }
}
