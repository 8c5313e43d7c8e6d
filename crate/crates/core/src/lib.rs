//! Safety-critical control with CLF-CBF quadratic programs.
//!
//! The crate covers two controllers for control-affine systems
//! `ẋ = f(x) + g(x)u` guarded by a circular obstacle:
//!
//! * [`nominal`]: the minimum-norm CLF-CBF QP with a relaxed CLF row. Its
//!   closed loop can have asymptotically stable equilibria on the obstacle
//!   boundary; [`equilibria`] locates and classifies them.
//! * [`shaped`]: a Lyapunov-shaping QP that rotates a non-radial reference CLF
//!   through an auxiliary `SO(n)` state and adds a barrier on the collinearity
//!   measure `D(x, Q)` to steer trajectories away from boundary equilibria.
//!
//! [`sim`] integrates either closed loop with RK4 and monitors safety.

pub mod equilibria;
pub mod error;
pub mod linalg;
pub mod models;
pub mod nominal;
pub mod qp;
pub mod scenario;
pub mod shaped;
pub mod sim;

pub use error::{Error, Result};
pub use linalg::{Matrix, RotationQ, Vector};
