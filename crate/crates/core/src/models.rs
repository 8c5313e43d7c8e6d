//! Control-affine dynamics, the quadratic CLF, the circular-obstacle CBF and
//! linear class-K gains.

use std::fmt;
use std::str::FromStr;

use crate::{Error, Matrix, Result, Vector};

/// Below this norm the `‖x‖`-based drifts are treated as non-differentiable.
pub const SINGULAR_NORM: f64 = 1e-12;

/// `ẋ = f(x) + g(x) u` with exact first derivatives.
pub trait ControlAffineSystem: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    fn drift(&self, x: &Vector) -> Vector;

    /// `g(x)`, an `n × m` matrix.
    fn input_matrix(&self, x: &Vector) -> Matrix;

    /// `∇f(x)`, rows indexed by the component of `f`.
    fn drift_jacobian(&self, x: &Vector) -> Result<Matrix>;

    /// Jacobians `∇gᵢ(x)` of each column of `g`.
    fn input_jacobians(&self, x: &Vector) -> Vec<Matrix>;

    /// `G(x) = g(x) g(x)ᵀ`.
    fn gram(&self, x: &Vector) -> Matrix {
        let g = self.input_matrix(x);
        &g * g.transpose()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    /// `f = 0`, `g = I`.
    Integrator,
    /// `f = 0.1‖x‖(1, 1)ᵀ`, `g = I`.
    F1,
    /// `f = 0.1(‖x‖ − xᵀx)(1, 1)ᵀ`, `g = I`.
    F2,
    /// Linear drift with a state-dependent input gain `g = diag(1 + x₁², 1)`.
    /// Not a benchmark scenario; it exercises the non-constant-`g` terms of `∇D`.
    Synthetic,
}

impl SystemKind {
    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Integrator => "integrator",
            SystemKind::F1 => "f1",
            SystemKind::F2 => "f2",
            SystemKind::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SystemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "integrator" => Ok(SystemKind::Integrator),
            "f1" => Ok(SystemKind::F1),
            "f2" => Ok(SystemKind::F2),
            "synthetic" => Ok(SystemKind::Synthetic),
            other => Err(Error::InvalidParameter(format!(
                "unknown system `{other}` (expected integrator, f1, f2 or synthetic)"
            ))),
        }
    }
}

/// The benchmark systems, all with `m = n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinSystem {
    kind: SystemKind,
    n: usize,
}

const SYNTHETIC_DRIFT: [f64; 4] = [0.0, 0.2, -0.1, 0.05];

pub fn builtin_system(kind: SystemKind, n: usize) -> Result<BuiltinSystem> {
    match (kind, n) {
        (SystemKind::Integrator, 2 | 3) | (_, 2) => Ok(BuiltinSystem { kind, n }),
        _ => Err(Error::InvalidParameter(format!(
            "system {kind} requires n = 2{}, got n = {n}",
            if kind == SystemKind::Integrator { " or 3" } else { "" }
        ))),
    }
}

impl BuiltinSystem {
    pub fn kind(&self) -> SystemKind {
        self.kind
    }

    fn ones(&self) -> Vector {
        Vector::from_element(self.n, 1.0)
    }
}

impl ControlAffineSystem for BuiltinSystem {
    fn state_dim(&self) -> usize {
        self.n
    }

    fn input_dim(&self) -> usize {
        self.n
    }

    fn drift(&self, x: &Vector) -> Vector {
        match self.kind {
            SystemKind::Integrator => Vector::zeros(self.n),
            SystemKind::F1 => self.ones() * (0.1 * x.norm()),
            SystemKind::F2 => self.ones() * (0.1 * (x.norm() - x.norm_squared())),
            SystemKind::Synthetic => Matrix::from_row_slice(2, 2, &SYNTHETIC_DRIFT) * x,
        }
    }

    fn input_matrix(&self, x: &Vector) -> Matrix {
        match self.kind {
            SystemKind::Synthetic => Matrix::from_diagonal(&Vector::from_column_slice(&[1.0 + x[0] * x[0], 1.0])),
            _ => Matrix::identity(self.n, self.n),
        }
    }

    fn drift_jacobian(&self, x: &Vector) -> Result<Matrix> {
        let n = self.n;
        match self.kind {
            SystemKind::Integrator => Ok(Matrix::zeros(n, n)),
            SystemKind::Synthetic => Ok(Matrix::from_row_slice(2, 2, &SYNTHETIC_DRIFT)),
            SystemKind::F1 | SystemKind::F2 => {
                let norm = x.norm();
                if norm < SINGULAR_NORM {
                    return Err(Error::Singularity { x: x.iter().copied().collect() });
                }
                let mut row = x / norm;
                if self.kind == SystemKind::F2 {
                    row -= x * 2.0;
                }
                Ok(self.ones() * row.transpose() * 0.1)
            }
        }
    }

    fn input_jacobians(&self, x: &Vector) -> Vec<Matrix> {
        let n = self.n;
        let mut jacobians = vec![Matrix::zeros(n, n); n];
        if self.kind == SystemKind::Synthetic {
            // column 0 is (1 + x₁², 0)ᵀ
            jacobians[0][(0, 0)] = 2.0 * x[0];
        }
        jacobians
    }
}

/// `V(x) = ½ xᵀ Λ x` with `Λ = diag(λ)`, `λᵢ > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticClf {
    lambda: Vector,
}

impl QuadraticClf {
    pub fn new(lambda: &[f64]) -> Result<Self> {
        if lambda.is_empty() || lambda.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "CLF weights must be finite and positive, got {lambda:?}"
            )));
        }
        Ok(QuadraticClf { lambda: Vector::from_column_slice(lambda) })
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn lambda(&self) -> &Vector {
        &self.lambda
    }

    /// Radial quadratics (all weights equal) cannot be shaped by rotation.
    pub fn is_radial(&self) -> bool {
        self.lambda.max() == self.lambda.min()
    }

    pub fn hessian(&self) -> Matrix {
        Matrix::from_diagonal(&self.lambda)
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * self.lambda.iter().zip(x.iter()).map(|(l, xi)| l * xi * xi).sum::<f64>()
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        self.lambda.component_mul(x)
    }

    pub fn grad_hess(&self, x: &Vector) -> (Vector, Matrix) {
        (self.gradient(x), self.hessian())
    }
}

/// `h(x) = ½‖x − x_c‖² − ½r²`: the safe set is the outside of a ball.
#[derive(Debug, Clone, PartialEq)]
pub struct CircularObstacleCbf {
    center: Vector,
    radius: f64,
}

impl CircularObstacleCbf {
    pub fn new(center: &[f64], radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "obstacle needs a finite center and positive radius, got {center:?}, r = {radius}"
            )));
        }
        Ok(CircularObstacleCbf { center: Vector::from_column_slice(center), radius })
    }

    pub fn center(&self) -> &Vector {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn value(&self, x: &Vector) -> f64 {
        0.5 * (x - &self.center).norm_squared() - 0.5 * self.radius * self.radius
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        x - &self.center
    }

    pub fn hessian(&self) -> Matrix {
        let n = self.center.len();
        Matrix::identity(n, n)
    }

    pub fn value_grad_hess(&self, x: &Vector) -> (f64, Vector, Matrix) {
        (self.value(x), self.gradient(x), self.hessian())
    }

    /// Boundary point at angle `theta` (planar obstacles only).
    pub fn boundary_point(&self, theta: f64) -> Vector {
        let (s, c) = theta.sin_cos();
        &self.center + Vector::from_column_slice(&[c, s]) * self.radius
    }
}

/// Linear class-K function `s ↦ gain·s`.
///
/// The extended variant is defined on all of `ℝ`; the plain one saturates at
/// zero for negative arguments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassKappa {
    gain: f64,
    extended: bool,
}

impl ClassKappa {
    pub fn linear(gain: f64) -> Result<Self> {
        if !(gain.is_finite() && gain > 0.0) {
            return Err(Error::InvalidParameter(format!("class-K gain must be positive, got {gain}")));
        }
        Ok(ClassKappa { gain, extended: true })
    }

    pub fn non_extended(self) -> Self {
        ClassKappa { extended: false, ..self }
    }

    pub fn unit() -> Self {
        ClassKappa { gain: 1.0, extended: true }
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn is_extended(&self) -> bool {
        self.extended
    }

    pub fn value(&self, s: f64) -> f64 {
        if self.extended || s >= 0.0 {
            self.gain * s
        } else {
            0.0
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        if self.extended || s >= 0.0 {
            self.gain
        } else {
            0.0
        }
    }
}

/// `(L_f φ, L_g φ)` for a function with gradient `grad` at `x`; `L_g φ` is
/// returned as a column vector of length `m`.
pub fn lie_derivatives<S: ControlAffineSystem + ?Sized>(sys: &S, x: &Vector, grad: &Vector) -> (f64, Vector) {
    let lf = grad.dot(&sys.drift(x));
    let lg = sys.input_matrix(x).transpose() * grad;
    (lf, lg)
}
