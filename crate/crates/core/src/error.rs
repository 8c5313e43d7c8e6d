use thiserror::Error;

use crate::Matrix;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// `‖x‖` is not differentiable at the origin, so neither is the drift.
    #[error("drift Jacobian is singular at x = {x:?} (‖x‖ not differentiable)")]
    Singularity { x: Vec<f64> },

    #[error("QP infeasible: no active set satisfies primal and dual feasibility")]
    Infeasible,

    #[error("QP degenerate: KKT system singular for every admissible active set")]
    Degenerate,

    #[error("closed-form branch inapplicable: {0}")]
    BranchInapplicable(&'static str),

    #[error("rotation retraction failed: {0}")]
    Retraction(String),

    #[error("unsupported boundary: {0}")]
    UnsupportedBoundary(String),

    #[error("not a boundary point: |h(x)| = {0:e}")]
    NotBoundaryPoint(f64),

    /// The finite-difference stencil crossed a switching surface of the QP
    /// controller; the two one-sided estimates are returned instead.
    #[error("active-set switch in Jacobian stencil")]
    ActiveSetSwitch {
        forward: Box<Matrix>,
        backward: Box<Matrix>,
    },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
}
