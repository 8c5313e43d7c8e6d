//! Small dense linear algebra on `ℝⁿ` for `n ∈ {2, 3}`: the scaled orthogonal
//! projection, the hat map onto `so(n)`, the `O_n` operator and rotation
//! exponential/retraction.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Default bound on `‖QᵀQ − I‖_F` and `|det Q − 1|` for a [`RotationQ`].
pub const ROTATION_TOL: f64 = 1e-9;

/// Largest Frobenius distance to the orthogonal group accepted by
/// [`rotation_retract`].
pub const RETRACT_MAX_DISTANCE: f64 = 0.1;

/// Dimension of `so(n)`, i.e. of the virtual rotation input `ω`.
pub fn omega_dim(n: usize) -> usize {
    n * (n - 1) / 2
}

/// State dimension whose `so(n)` has `k` coordinates.
fn dim_from_omega(k: usize) -> usize {
    match k {
        1 => 2,
        3 => 3,
        _ => panic!("ω must have 1 (n = 2) or 3 (n = 3) entries, got {k}"),
    }
}

pub fn vector(entries: &[f64]) -> Vector {
    Vector::from_column_slice(entries)
}

/// `P_v = ‖v‖² I − v vᵀ`.
pub fn scaled_projection(v: &Vector) -> Matrix {
    let n = v.len();
    Matrix::identity(n, n) * v.norm_squared() - v * v.transpose()
}

/// `P_v w`, computed from the minors `vᵢwⱼ − vⱼwᵢ` so that nearly parallel
/// inputs do not lose precision to cancellation.
pub fn apply_scaled_projection(v: &Vector, w: &Vector) -> Vector {
    let n = v.len();
    Vector::from_fn(n, |k, _| (0..n).map(|i| v[i] * (v[i] * w[k] - v[k] * w[i])).sum())
}

/// `wᵀ P_v w = Σ_{i<j} (vᵢwⱼ − vⱼwᵢ)²`.
pub fn scaled_projection_form(v: &Vector, w: &Vector) -> f64 {
    let n = v.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let m = v[i] * w[j] - v[j] * w[i];
            sum += m * m;
        }
    }
    sum
}

/// Hat map `ω ↦ ω̂ ∈ so(n)`.
///
/// For `n = 2` the single coordinate generates counter-clockwise rotation;
/// for `n = 3` the result is the cross-product matrix `ω̂ x = ω × x`.
pub fn skew(omega: &Vector) -> Matrix {
    match dim_from_omega(omega.len()) {
        2 => {
            let w = omega[0];
            Matrix::from_row_slice(2, 2, &[0.0, -w, w, 0.0])
        }
        _ => {
            let (a, b, c) = (omega[0], omega[1], omega[2]);
            Matrix::from_row_slice(3, 3, &[0.0, -c, b, c, 0.0, -a, -b, a, 0.0])
        }
    }
}

/// `O_n(x)`, defined by `ω̂ x = O_n(x) ω` for every `ω`.
pub fn o_n(x: &Vector) -> Matrix {
    match x.len() {
        2 => Matrix::from_column_slice(2, 1, &[-x[1], x[0]]),
        3 => -skew(x),
        n => panic!("O_n is only defined for n ∈ {{2, 3}}, got {n}"),
    }
}

/// An element of `SO(n)` whose orthogonality and orientation have been checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RotationQ(Matrix);

impl RotationQ {
    pub fn identity(n: usize) -> Self {
        RotationQ(Matrix::identity(n, n))
    }

    pub fn new(m: Matrix) -> Result<Self> {
        Self::with_tolerance(m, ROTATION_TOL)
    }

    pub fn with_tolerance(m: Matrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "rotation must be square, got {}×{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("rotation has non-finite entries".into()));
        }
        let defect = orthogonality_defect(&m);
        let det = m.determinant();
        if defect > tol || (det - 1.0).abs() > tol {
            return Err(Error::InvalidParameter(format!(
                "not a rotation: ‖QᵀQ − I‖ = {defect:e}, det = {det}"
            )));
        }
        Ok(RotationQ(m))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    /// `‖QᵀQ − I‖_F`.
    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.0)
    }

    /// Planar angle of the rotation (`n = 2` only).
    pub fn angle(&self) -> Option<f64> {
        (self.dim() == 2).then(|| self.0[(1, 0)].atan2(self.0[(0, 0)]))
    }

    /// Right-multiplies by `exp(dt ω̂)`, the flow of `Q̇ = Q ω̂` for constant `ω`.
    pub fn compose_exp(&self, omega: &Vector, dt: f64) -> Self {
        RotationQ(&self.0 * rotation_exp(omega, dt).0)
    }
}

pub fn orthogonality_defect(m: &Matrix) -> f64 {
    let n = m.nrows();
    (m.transpose() * m - Matrix::identity(n, n)).norm()
}

/// Frobenius-nearest rotation (polar factor) of a near-orthogonal matrix.
///
/// Fails when `q` is farther than [`RETRACT_MAX_DISTANCE`] from the orthogonal
/// group or when its polar factor is a reflection.
pub fn rotation_retract(q: &Matrix) -> Result<RotationQ> {
    if !q.is_square() || q.iter().any(|v| !v.is_finite()) {
        return Err(Error::Retraction("matrix is not square and finite".into()));
    }
    let svd = q.clone().svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::Retraction("SVD did not converge".into())),
    };
    let polar = u * v_t;
    let distance = (q - &polar).norm();
    if distance > RETRACT_MAX_DISTANCE {
        return Err(Error::Retraction(format!(
            "matrix is {distance:e} away from the orthogonal group"
        )));
    }
    let det = polar.determinant();
    if det <= 0.0 {
        return Err(Error::Retraction(format!("polar factor is a reflection (det = {det})")));
    }
    Ok(RotationQ(polar))
}

/// `exp(dt ω̂)` in closed form: planar rotation for `n = 2`, Rodrigues for `n = 3`.
pub fn rotation_exp(omega: &Vector, dt: f64) -> RotationQ {
    match dim_from_omega(omega.len()) {
        2 => {
            let (s, c) = (dt * omega[0]).sin_cos();
            RotationQ(Matrix::from_row_slice(2, 2, &[c, -s, s, c]))
        }
        _ => {
            let theta = dt * omega.norm();
            let k = skew(&(omega * dt));
            let i = Matrix::identity(3, 3);
            if theta < 1e-8 {
                // second-order Taylor expansion; the remainder is O(θ³)
                return RotationQ(i + &k + &k * &k * 0.5);
            }
            let a = theta.sin() / theta;
            let b = (1.0 - theta.cos()) / (theta * theta);
            RotationQ(i + &k * a + &k * &k * b)
        }
    }
}
