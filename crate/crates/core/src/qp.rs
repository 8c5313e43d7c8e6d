//! Exact solver for small diagonal-cost QPs by active-set enumeration.
//!
//! The problem is `min Σᵢ cᵢ zᵢ²` subject to at most four affine rows. Multipliers
//! follow the Lagrangian `½ Σᵢ cᵢ zᵢ² + Σⱼ λⱼ (aⱼᵀz − bⱼ)` with every row
//! normalized to `≤` form, so for the CLF-CBF QP `λ_clf = p·w`.

use crate::{Error, Matrix, Result, Vector};

pub const MAX_ROWS: usize = 4;
/// Smallest accepted multiplier; admits boundary-degenerate zeros.
pub const DUAL_TOL: f64 = -1e-10;
/// Primal feasibility tolerance on unit-normalized rows.
pub const PRIMAL_TOL: f64 = 1e-12;
/// Relative pivot tolerance of the equality-constrained KKT solves.
pub const PIVOT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    LessEq,
    GreaterEq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vector,
    pub rhs: f64,
    pub sense: Sense,
}

impl Constraint {
    pub fn le(coeffs: Vector, rhs: f64) -> Self {
        Constraint { coeffs, rhs, sense: Sense::LessEq }
    }

    pub fn ge(coeffs: Vector, rhs: f64) -> Self {
        Constraint { coeffs, rhs, sense: Sense::GreaterEq }
    }

    /// `(a, b)` with the row written as `aᵀz ≤ b`.
    pub fn normalized(&self) -> (Vector, f64) {
        match self.sense {
            Sense::LessEq => (self.coeffs.clone(), self.rhs),
            Sense::GreaterEq => (-&self.coeffs, -self.rhs),
        }
    }

    /// Signed slack, non-negative when satisfied.
    pub fn slack(&self, z: &Vector) -> f64 {
        let (a, b) = self.normalized();
        b - a.dot(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    weights: Vector,
    rows: Vec<Constraint>,
}

impl QpProblem {
    pub fn new(weights: Vector, rows: Vec<Constraint>) -> Result<Self> {
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "cost weights must be positive, got {:?}",
                weights.as_slice()
            )));
        }
        if rows.len() > MAX_ROWS {
            return Err(Error::InvalidParameter(format!("at most {MAX_ROWS} rows, got {}", rows.len())));
        }
        for (i, row) in rows.iter().enumerate() {
            if row.coeffs.len() != weights.len() {
                return Err(Error::Dimension(format!(
                    "row {i} has {} coefficients for {} decision variables",
                    row.coeffs.len(),
                    weights.len()
                )));
            }
            if !row.rhs.is_finite() || row.coeffs.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidParameter(format!("row {i} is not finite")));
            }
        }
        Ok(QpProblem { weights, rows })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn rows(&self) -> &[Constraint] {
        &self.rows
    }

    /// Stated cost `Σᵢ cᵢ zᵢ²`.
    pub fn objective(&self, z: &Vector) -> f64 {
        self.weights.iter().zip(z.iter()).map(|(c, v)| c * v * v).sum()
    }

    pub fn without_row(&self, index: usize) -> QpProblem {
        let mut rows = self.rows.clone();
        rows.remove(index);
        QpProblem { weights: self.weights.clone(), rows }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub z: Vector,
    /// One multiplier per row, in row order.
    pub multipliers: Vec<f64>,
    /// Bit `i` set when row `i` is in the optimal active set.
    pub active_mask: u8,
    pub objective: f64,
}

impl QpSolution {
    pub fn is_active(&self, row: usize) -> bool {
        self.active_mask & (1 << row) != 0
    }
}

/// Solves the QP by enumerating every subset of rows as equalities.
///
/// Rows are rescaled to unit norm before the KKT solves, which makes the
/// tolerances independent of row scaling. Among the candidates that are
/// primal and dual feasible the lowest objective wins; ties go to the
/// smallest active set, then the lowest mask.
pub fn solve_active_set(prob: &QpProblem) -> Result<QpSolution> {
    let k = prob.rows.len();
    let inv_w = prob.weights.map(|c| 1.0 / c);

    let mut unit_rows: Vec<(Vector, f64, f64)> = Vec::with_capacity(k);
    for row in &prob.rows {
        let (a, b) = row.normalized();
        let norm = a.norm();
        if norm == 0.0 {
            if b < -PRIMAL_TOL * b.abs().max(1.0) {
                return Err(Error::Infeasible);
            }
            unit_rows.push((a, b, 0.0));
        } else {
            unit_rows.push((a / norm, b / norm, norm));
        }
    }

    let mut best: Option<(QpSolution, u32)> = None;
    let mut singular = false;
    for mask in 0u8..(1u8 << k) {
        let active: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).collect();
        // a zero row never needs a multiplier
        if active.iter().any(|&i| unit_rows[i].2 == 0.0) {
            continue;
        }
        let rhs: Vec<f64> = active.iter().map(|&i| unit_rows[i].1).collect();
        let Some(mut mu) = active_multipliers(&unit_rows, &active, &inv_w, &rhs) else {
            singular = true;
            continue;
        };
        let mut z = primal_from_multipliers(&unit_rows, &active, &inv_w, &mu, prob.dim());
        // one step of iterative refinement on the active equalities
        if !active.is_empty() {
            let residual: Vec<f64> = active.iter().map(|&i| unit_rows[i].1 - unit_rows[i].0.dot(&z)).collect();
            if let Some(delta) = active_multipliers(&unit_rows, &active, &inv_w, &residual) {
                for (m, d) in mu.iter_mut().zip(&delta) {
                    *m += d;
                }
                z = primal_from_multipliers(&unit_rows, &active, &inv_w, &mu, prob.dim());
            }
        }
        if mu.iter().any(|&m| m < DUAL_TOL) {
            continue;
        }
        let feasible = (0..k).all(|i| {
            if mask & (1 << i) != 0 {
                return true;
            }
            let (a, b, _) = &unit_rows[i];
            b - a.dot(&z) >= -PRIMAL_TOL * b.abs().max(1.0)
        });
        if !feasible {
            continue;
        }
        let mut multipliers = vec![0.0; k];
        for (&i, &m) in active.iter().zip(mu.iter()) {
            multipliers[i] = m / unit_rows[i].2;
        }
        let objective = prob.objective(&z);
        let candidate = QpSolution { z, multipliers, active_mask: mask, objective };
        let size = mask.count_ones();
        let better = match &best {
            None => true,
            Some((incumbent, inc_size)) => {
                let tie = 1e-12 * incumbent.objective.abs().max(1.0);
                if candidate.objective < incumbent.objective - tie {
                    true
                } else if candidate.objective <= incumbent.objective + tie {
                    size < *inc_size
                } else {
                    false
                }
            }
        };
        if better {
            best = Some((candidate, size));
        }
    }
    match best {
        Some((sol, _)) => Ok(sol),
        None if singular => Err(Error::Degenerate),
        None => Err(Error::Infeasible),
    }
}

fn primal_from_multipliers(rows: &[(Vector, f64, f64)], active: &[usize], inv_w: &Vector, mu: &[f64], dim: usize) -> Vector {
    let mut z = Vector::zeros(dim);
    for (&i, &m) in active.iter().zip(mu) {
        z -= rows[i].0.component_mul(inv_w) * m;
    }
    z
}

/// Solves `(A_S W⁻¹ A_Sᵀ) μ = −b_S`; `None` when the Gram matrix is singular.
fn active_multipliers(rows: &[(Vector, f64, f64)], active: &[usize], inv_w: &Vector, b: &[f64]) -> Option<Vec<f64>> {
    let s = active.len();
    if s == 0 {
        return Some(Vec::new());
    }
    let mut gram = Matrix::zeros(s, s);
    let mut rhs = Vector::zeros(s);
    for (r, &i) in active.iter().enumerate() {
        rhs[r] = -b[r];
        for (c, &j) in active.iter().enumerate() {
            gram[(r, c)] = rows[i].0.component_mul(inv_w).dot(&rows[j].0);
        }
    }
    let scale = gram.amax().max(f64::MIN_POSITIVE);
    let lu = gram.full_piv_lu();
    let u = lu.u();
    let min_pivot = (0..s).map(|d| u[(d, d)].abs()).fold(f64::INFINITY, f64::min);
    if min_pivot <= PIVOT_TOL * scale {
        return None;
    }
    lu.solve(&rhs).map(|mu| mu.iter().copied().collect())
}

/// Max-norm residuals of the four KKT condition groups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

pub fn kkt_residuals(prob: &QpProblem, sol: &QpSolution) -> KktResiduals {
    let mut grad = prob.weights.component_mul(&sol.z);
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut compl: f64 = 0.0;
    for (row, &lambda) in prob.rows.iter().zip(sol.multipliers.iter()) {
        let (a, b) = row.normalized();
        grad += &a * lambda;
        let slack = b - a.dot(&sol.z);
        primal = primal.max(-slack);
        dual = dual.max(-lambda);
        compl = compl.max((lambda * slack).abs());
    }
    KktResiduals { stationarity: grad.amax(), primal, dual, complementarity: compl }
}
