use thiserror::Error;

use crate::lqr::GainSet;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mechanism: {0}")]
    InvalidMechanism(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("Newton KKT matrix is singular (redundant constraints?)")]
    SingularKkt,

    #[error("no control achieves static balance (least-squares residual {residual:e})")]
    Unactuatable { residual: f64 },

    #[error("dynamics Jacobian with respect to the next state is singular (condition {condition:e})")]
    SingularDynamicsJacobian { condition: f64 },

    #[error("reference is not dynamically consistent (residual {residual:e})")]
    InconsistentReference { residual: f64 },

    #[error("nominal trajectory is inconsistent at step {index} (residual {residual:e})")]
    InconsistentNominal { index: usize, residual: f64 },

    #[error("R + B'PB is singular")]
    SingularInnerMatrix,

    #[error("GC is singular (condition {condition:e})")]
    SingularGc { condition: f64 },

    #[error("constrained Riccati block matrix is singular")]
    SingularSaddle,

    #[error("Riccati iteration did not converge in {iterations} iterations (last change {last_change:e})")]
    NoConvergence {
        iterations: usize,
        last_change: f64,
        last: Box<GainSet>,
    },

    #[error("step {index}: {source}")]
    AtStep {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("orientation chart is singular: {0}")]
    ChartSingularity(String),

    #[error("infeasible configuration: {0}")]
    Infeasible(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
