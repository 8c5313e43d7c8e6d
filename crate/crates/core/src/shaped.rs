//! Lyapunov-shaping QP controller.
//!
//! The reference CLF `V_r(x) = ½ xᵀΛx` is rotated by an auxiliary state
//! `Q ∈ SO(n)` with `Q̇ = Q ω̂`, giving `V(x, Q) = V_r(Qx)`. A barrier on the
//! collinearity measure
//!
//! ```text
//! D(x, Q) = ½ ∇Vᵀ G (P_f + P_{G∇h}) G ∇V,      h_D = σ(h)(D − ε)
//! ```
//!
//! keeps trajectories near the obstacle away from configurations where
//! `f`, `G∇V` and `G∇h` line up. Decision vector: `z = (u, ω, w)`.

use crate::linalg::{apply_scaled_projection, o_n, omega_dim, scaled_projection_form, skew, RotationQ};
use crate::models::{CircularObstacleCbf, ClassKappa, ControlAffineSystem, QuadraticClf};
use crate::qp::{solve_active_set, Constraint, QpProblem};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapedGains {
    pub p: f64,
    /// Weight of `‖ω‖²` in the cost.
    pub q: f64,
    pub gamma: ClassKappa,
    pub alpha: ClassKappa,
    pub beta: ClassKappa,
    pub epsilon: f64,
    /// Length scale `ℓ` of `σ(h) = exp(−h/ℓ)`.
    pub sigma_scale: f64,
}

impl ShapedGains {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p", self.p), ("q", self.q), ("epsilon", self.epsilon), ("sigma_scale", self.sigma_scale)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `p = q = 5`, `ε = 0.1`, unit gains, `ℓ = 1`.
    pub fn benchmark() -> Self {
        ShapedGains {
            p: 5.0,
            q: 5.0,
            gamma: ClassKappa::unit(),
            alpha: ClassKappa::unit(),
            beta: ClassKappa::unit(),
            epsilon: 0.1,
            sigma_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedState {
    pub x: Vector,
    pub q: RotationQ,
}

impl ShapedState {
    /// `Q = I`.
    pub fn at(x: Vector) -> Self {
        let n = x.len();
        ShapedState { x, q: RotationQ::identity(n) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedControlOutput {
    pub u: Vector,
    pub omega: Vector,
    pub w: f64,
    /// Multipliers of the CLF, CBF and `h_D` rows.
    pub lambda: [f64; 3],
    pub active_mask: u8,
}

/// Value, `x`-gradient and `ω`-row of the rotated CLF.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedClf {
    pub value: f64,
    pub grad_x: Vector,
    /// `∇Vᵀ O_n(x)`: coefficient of `ω` in `V̇`.
    pub omega_row: Vector,
    /// `H_V = QᵀΛQ`.
    pub hessian: Matrix,
}

/// `σ(h) = exp(−h/ℓ)` and its derivative.
pub fn sigma(h: f64, scale: f64) -> (f64, f64) {
    let s = (-h / scale).exp();
    (s, -s / scale)
}

/// `Γ_{g,v} = Σᵢ (gᵢᵀv I + gᵢ vᵀ) ∇gᵢ`, so that `∂(G v)/∂x = G ∂v/∂x + Γ_{g,v}`.
pub fn gamma_matrix<S: ControlAffineSystem + ?Sized>(sys: &S, v: &Vector, x: &Vector) -> Matrix {
    let n = sys.state_dim();
    let g = sys.input_matrix(x);
    let eye = Matrix::identity(n, n);
    let mut out = Matrix::zeros(n, n);
    for (i, dg) in sys.input_jacobians(x).iter().enumerate() {
        let gi = g.column(i);
        out += (&eye * gi.dot(v) + gi * v.transpose()) * dg;
    }
    out
}

#[derive(Debug, Clone)]
pub struct ShapedController<S> {
    pub system: S,
    pub clf: QuadraticClf,
    pub cbf: CircularObstacleCbf,
    pub gains: ShapedGains,
}

/// Everything the rows and gradients are built from at one state.
struct Terms {
    f: Vector,
    g: Matrix,
    clf: RotatedClf,
    h: f64,
    grad_h: Vector,
    d: f64,
    grad_d: Vector,
    grad_q_d: Vector,
}

impl<S: ControlAffineSystem> ShapedController<S> {
    pub fn new(system: S, clf: QuadraticClf, cbf: CircularObstacleCbf, gains: ShapedGains) -> Result<Self> {
        gains.validate()?;
        let n = system.state_dim();
        if clf.dim() != n || cbf.center().len() != n {
            return Err(Error::Dimension(format!(
                "system has n = {n}, CLF has {}, obstacle center has {}",
                clf.dim(),
                cbf.center().len()
            )));
        }
        if clf.is_radial() {
            return Err(Error::InvalidParameter("the reference CLF must be non-radial".into()));
        }
        Ok(ShapedController { system, clf, cbf, gains })
    }

    pub fn rotated_clf(&self, s: &ShapedState) -> RotatedClf {
        let q = s.q.matrix();
        let hessian = q.transpose() * self.clf.hessian() * q;
        let grad_x = &hessian * &s.x;
        let omega_row = o_n(&s.x).transpose() * &grad_x;
        RotatedClf { value: 0.5 * s.x.dot(&grad_x), grad_x, omega_row, hessian }
    }

    /// `D(x, Q)`.
    pub fn collinearity_measure(&self, s: &ShapedState) -> f64 {
        let x = &s.x;
        let gram = self.system.gram(x);
        let a = &gram * self.rotated_clf(s).grad_x;
        let b = &gram * self.cbf.gradient(x);
        let f = self.system.drift(x);
        0.5 * (scaled_projection_form(&f, &a) + scaled_projection_form(&b, &a))
    }

    /// `(∇D, ∇_Q D)`, the latter with respect to `Q ↦ Q exp(ω̂)`.
    pub fn grad_d(&self, s: &ShapedState) -> Result<(Vector, Vector)> {
        let t = self.terms(s)?;
        Ok((t.grad_d, t.grad_q_d))
    }

    /// `(∇D, ∇_Q D)` by fourth-order central differences of
    /// [`collinearity_measure`](Self::collinearity_measure), perturbing `Q`
    /// as `Q exp(δω̂)`.
    pub fn finite_difference_grad_d(&self, s: &ShapedState, step: f64) -> (Vector, Vector) {
        let stencil = |eval: &dyn Fn(f64) -> f64| {
            (eval(-2.0 * step) - 8.0 * eval(-step) + 8.0 * eval(step) - eval(2.0 * step)) / (12.0 * step)
        };
        let n = s.x.len();
        let gx = Vector::from_fn(n, |j, _| {
            stencil(&|d| {
                let mut moved = s.clone();
                moved.x[j] += d;
                self.collinearity_measure(&moved)
            })
        });
        let k = omega_dim(n);
        let gq = Vector::from_fn(k, |j, _| {
            let mut dir = Vector::zeros(k);
            dir[j] = 1.0;
            stencil(&|d| {
                let moved = ShapedState { x: s.x.clone(), q: s.q.compose_exp(&dir, d) };
                self.collinearity_measure(&moved)
            })
        });
        (gx, gq)
    }

    /// Relative errors of the analytic `(∇D, ∇_Q D)` against
    /// [`finite_difference_grad_d`](Self::finite_difference_grad_d).
    pub fn gradient_error(&self, s: &ShapedState, step: f64) -> Result<(f64, f64)> {
        let (gx, gq) = self.grad_d(s)?;
        let (fx, fq) = self.finite_difference_grad_d(s, step);
        let rel = |a: &Vector, b: &Vector| (a - b).amax() / a.amax().max(b.amax()).max(1.0);
        Ok((rel(&gx, &fx), rel(&gq, &fq)))
    }

    /// `h_D(x, Q) = σ(h)(D − ε)`.
    pub fn hd_value(&self, s: &ShapedState) -> f64 {
        let (sig, _) = sigma(self.cbf.value(&s.x), self.gains.sigma_scale);
        sig * (self.collinearity_measure(s) - self.gains.epsilon)
    }

    fn terms(&self, s: &ShapedState) -> Result<Terms> {
        let x = &s.x;
        let sys = &self.system;
        let f = sys.drift(x);
        let g = sys.input_matrix(x);
        let gram = &g * g.transpose();
        let clf = self.rotated_clf(s);
        let (h, grad_h, hess_h) = self.cbf.value_grad_hess(x);

        let a = &gram * &clf.grad_x;
        let b = &gram * &grad_h;
        // (P_f + P_b) a
        let ma = apply_scaled_projection(&f, &a) + apply_scaled_projection(&b, &a);
        let d = 0.5 * (scaled_projection_form(&f, &a) + scaled_projection_form(&b, &a));

        let jac_a = &gram * &clf.hessian + gamma_matrix(sys, &clf.grad_x, x);
        let jac_b = &gram * &hess_h + gamma_matrix(sys, &grad_h, x);
        let mut grad_d = jac_a.transpose() * &ma + jac_b.transpose() * apply_scaled_projection(&a, &b);
        let paf = apply_scaled_projection(&a, &f);
        // P_a f vanishes at the origin, where ∇f may not exist.
        if paf.iter().any(|v| *v != 0.0) {
            grad_d += sys.drift_jacobian(x)?.transpose() * paf;
        }

        let d_grad_v = &clf.hessian * o_n(x) - o_n(&clf.grad_x);
        let grad_q_d = d_grad_v.transpose() * (&gram * &ma);

        Ok(Terms { f, g, clf, h, grad_h, d, grad_d, grad_q_d })
    }

    /// Decision vector `(u, ω, w)`; rows are CLF (`≤`), CBF (`≥`), `h_D` (`≥`).
    ///
    /// The `h_D` row is divided by `σ(h) > 0`, which leaves its feasible set
    /// unchanged and keeps it well scaled far from the obstacle.
    pub fn assemble(&self, s: &ShapedState) -> Result<QpProblem> {
        if s.x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("state is not finite".into()));
        }
        let t = self.terms(s)?;
        let gains = &self.gains;
        let m = self.system.input_dim();
        let k = omega_dim(self.system.state_dim());
        let dim = m + k + 1;

        let mut weights = Vector::from_element(dim, 1.0);
        weights.rows_mut(m, k).fill(gains.q);
        weights[m + k] = gains.p;

        let lfv = t.clf.grad_x.dot(&t.f);
        let lgv = t.g.transpose() * &t.clf.grad_x;
        let mut clf_row = Vector::zeros(dim);
        clf_row.rows_mut(0, m).copy_from(&lgv);
        clf_row.rows_mut(m, k).copy_from(&t.clf.omega_row);
        clf_row[m + k] = -1.0;

        let (lfh, lgh) = (t.grad_h.dot(&t.f), t.g.transpose() * &t.grad_h);
        let mut cbf_row = Vector::zeros(dim);
        cbf_row.rows_mut(0, m).copy_from(&lgh);

        // ḣ_D / σ = (σ'/σ)(D − ε) ḣ + ∇Dᵀẋ + ∇_Q D·ω
        let ratio = -1.0 / gains.sigma_scale;
        let excess = t.d - gains.epsilon;
        let mut hd_row = Vector::zeros(dim);
        hd_row.rows_mut(0, m).copy_from(&(&lgh * (ratio * excess) + t.g.transpose() * &t.grad_d));
        hd_row.rows_mut(m, k).copy_from(&t.grad_q_d);
        let hd_drift = ratio * excess * lfh + t.grad_d.dot(&t.f);
        let (sig, _) = sigma(t.h, gains.sigma_scale);
        let hd_rhs = if sig > 0.0 {
            -hd_drift - gains.beta.value(sig * excess) / sig
        } else {
            -hd_drift - gains.beta.derivative(excess) * excess
        };

        QpProblem::new(
            weights,
            vec![
                Constraint::le(clf_row, -lfv - gains.gamma.value(t.clf.value)),
                Constraint::ge(cbf_row, -lfh - gains.alpha.value(t.h)),
                Constraint::ge(hd_row, hd_rhs),
            ],
        )
    }

    pub fn solve(&self, s: &ShapedState) -> Result<ShapedControlOutput> {
        let prob = self.assemble(s)?;
        let sol = solve_active_set(&prob)?;
        let m = self.system.input_dim();
        let k = omega_dim(self.system.state_dim());
        Ok(ShapedControlOutput {
            u: sol.z.rows(0, m).into_owned(),
            omega: sol.z.rows(m, k).into_owned(),
            w: sol.z[m + k],
            lambda: [sol.multipliers[0], sol.multipliers[1], sol.multipliers[2]],
            active_mask: sol.active_mask,
        })
    }

    /// `(ẋ, Q̇)` of the closed loop.
    pub fn closed_loop(&self, s: &ShapedState) -> Result<(Vector, Matrix, ShapedControlOutput)> {
        let out = self.solve(s)?;
        let dx = self.system.drift(&s.x) + self.system.input_matrix(&s.x) * &out.u;
        let dq = s.q.matrix() * skew(&out.omega);
        Ok((dx, dq, out))
    }

    /// Residual of the closed-loop equilibrium conditions at `s`:
    /// `f − λ₁G∇V + λ₂G∇h + λ₃ g a₃` (with `a₃` the `u`-part of the `h_D` row)
    /// stacked with `ω`. Both parts vanish exactly at equilibria.
    pub fn equilibrium_residual(&self, s: &ShapedState) -> Result<(Vector, Vector)> {
        let prob = self.assemble(s)?;
        let sol = solve_active_set(&prob)?;
        let t = self.terms(s)?;
        let m = self.system.input_dim();
        let k = omega_dim(self.system.state_dim());
        let lgv = t.g.transpose() * &t.clf.grad_x;
        let lgh = t.g.transpose() * &t.grad_h;
        let a3 = prob.rows()[2].coeffs.rows(0, m).into_owned();
        let [l1, l2, l3] = [sol.multipliers[0], sol.multipliers[1], sol.multipliers[2]];
        let u = -lgv * l1 + lgh * l2 + a3 * l3;
        let residual = &t.f + &t.g * u;
        Ok((residual, sol.z.rows(m, k).into_owned()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{rotation_exp, vector};
    use crate::models::{builtin_system, BuiltinSystem, SystemKind};
    use crate::nominal::{NominalController, NominalGains};
    use crate::qp::kkt_residuals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn controller(kind: SystemKind) -> ShapedController<BuiltinSystem> {
        ShapedController::new(
            builtin_system(kind, 2).unwrap(),
            QuadraticClf::new(&[6.0, 1.0]).unwrap(),
            CircularObstacleCbf::new(&[0.0, 3.0], 1.5).unwrap(),
            ShapedGains::benchmark(),
        )
        .unwrap()
    }

    const FD_STEP: f64 = 1e-4;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1.0)
    }

    fn quarter_turn() -> RotationQ {
        rotation_exp(&vector(&[1.0]), std::f64::consts::FRAC_PI_2)
    }

    #[test]
    fn rotated_clf_reduces_at_identity() {
        let c = controller(SystemKind::Integrator);
        let x = vector(&[4.0, 4.0]);
        let r = c.rotated_clf(&ShapedState::at(x.clone()));
        assert_eq!(r.value, 56.0);
        assert_eq!(r.grad_x, vector(&[24.0, 4.0]));
        let r0 = c.rotated_clf(&ShapedState::at(Vector::zeros(2)));
        assert_eq!(r0.omega_row, Vector::zeros(1));
    }

    #[test]
    fn rotated_clf_quarter_turn() {
        let c = controller(SystemKind::Integrator);
        let s = ShapedState { x: vector(&[1.0, 0.0]), q: quarter_turn() };
        assert!((c.rotated_clf(&s).value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn clf_derivative_is_affine_in_u_and_omega() {
        let c = controller(SystemKind::F1);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let x = vector(&[rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)]);
            let q = rotation_exp(&vector(&[rng.gen_range(-3.0..3.0)]), 1.0);
            let u = vector(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let omega = vector(&[rng.gen_range(-2.0..2.0)]);
            let s = ShapedState { x: x.clone(), q: q.clone() };
            let r = c.rotated_clf(&s);
            let xdot = c.system.drift(&x) + &u;
            let predicted = r.grad_x.dot(&xdot) + r.omega_row.dot(&omega);
            let mut errs = Vec::new();
            for dt in [1e-3, 5e-4] {
                let moved = ShapedState { x: &x + &xdot * dt, q: q.compose_exp(&omega, dt) };
                let fd = (c.rotated_clf(&moved).value - r.value) / dt;
                errs.push((fd - predicted).abs());
            }
            // first-order difference: the error halves with dt
            assert!(errs[1] <= 0.6 * errs[0] + 1e-9, "{errs:?}");
        }
    }

    #[test]
    fn collinearity_examples() {
        let c = controller(SystemKind::Integrator);
        assert!(c.collinearity_measure(&ShapedState::at(vector(&[0.0, 4.5]))).abs() < 1e-12);
        assert!((c.collinearity_measure(&ShapedState::at(vector(&[4.0, 4.0]))) - 32.0).abs() < 1e-12);
        let hd = c.hd_value(&ShapedState::at(vector(&[0.0, 4.5])));
        assert!((hd + 0.1).abs() < 1e-12);
        let hd = c.hd_value(&ShapedState::at(vector(&[4.0, 4.0])));
        assert!((hd - (-7.375f64).exp() * 31.9).abs() < 1e-12);
        assert!((hd - 0.0200).abs() < 1e-4);
    }

    #[test]
    fn collinearity_vanishes_when_rotated_gradient_is_parallel() {
        let c = controller(SystemKind::Integrator);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
            let q = rotation_exp(&vector(&[rng.gen_range(-3.0..3.0)]), 1.0);
            assert!(c.collinearity_measure(&ShapedState { x: x.clone(), q }) >= -1e-12);
        }
        // on the x₂ axis both gradients are vertical for any diagonal Λ
        for x2 in [-4.0, 0.5, 4.5, 6.0] {
            let d = c.collinearity_measure(&ShapedState::at(vector(&[0.0, x2])));
            assert!(d.abs() <= 1e-12);
        }
    }

    #[test]
    fn sigma_values() {
        assert_eq!(sigma(0.0, 1.0), (1.0, -1.0));
        let (s, ds) = sigma(1.0, 1.0);
        assert!((s - (-1f64).exp()).abs() < 1e-16 && (ds + (-1f64).exp()).abs() < 1e-16);
        assert!(sigma(800.0, 1.0).0 == 0.0);
    }

    #[test]
    fn gamma_matrix_examples() {
        let int = builtin_system(SystemKind::Integrator, 2).unwrap();
        let x = vector(&[1.0, 2.0]);
        assert_eq!(gamma_matrix(&int, &vector(&[3.0, -1.0]), &x), Matrix::zeros(2, 2));
        let syn = builtin_system(SystemKind::Synthetic, 2).unwrap();
        assert_eq!(gamma_matrix(&syn, &Vector::zeros(2), &x), Matrix::zeros(2, 2));

        // ∂(G v)/∂x by finite differences for fixed v
        let v = vector(&[0.7, -1.3]);
        let analytic = gamma_matrix(&syn, &v, &x);
        let eps = 1e-6;
        for j in 0..2 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += eps;
            xm[j] -= eps;
            let col = (syn.gram(&xp) * &v - syn.gram(&xm) * &v) / (2.0 * eps);
            for i in 0..2 {
                assert!(rel_err(analytic[(i, j)], col[i]) < 1e-7);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in [SystemKind::Integrator, SystemKind::F1, SystemKind::F2, SystemKind::Synthetic] {
            let c = controller(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(21);
            let mut checked = 0;
            while checked < 100 {
                let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
                if c.cbf.value(&x) < 0.0 {
                    continue;
                }
                let q = rotation_exp(&vector(&[rng.gen_range(-3.2..3.2)]), 1.0);
                let s = ShapedState { x, q };
                let (ex, eq) = c.gradient_error(&s, FD_STEP).unwrap();
                assert!(ex <= 1e-5 && eq <= 1e-5, "{kind} at {s:?}: {ex:e} {eq:e}");
                checked += 1;
            }
        }
    }

    #[test]
    fn gradient_examples() {
        let c = controller(SystemKind::Integrator);
        let (_, gq) = c.grad_d(&ShapedState::at(Vector::zeros(2))).unwrap();
        assert_eq!(gq, Vector::zeros(1));
        let s = ShapedState::at(vector(&[4.0, 4.0]));
        let (gx, _) = c.grad_d(&s).unwrap();
        let (fx, _) = c.finite_difference_grad_d(&s, FD_STEP);
        assert!((&gx - &fx).amax() / gx.amax() <= 1e-6);
        // f1 at the origin: ∇f does not exist but is never needed
        assert!(controller(SystemKind::F1).grad_d(&ShapedState::at(Vector::zeros(2))).is_ok());
    }

    #[test]
    fn assembled_problem_shape() {
        let c = controller(SystemKind::Integrator);
        let prob = c.assemble(&ShapedState::at(vector(&[4.0, 4.0]))).unwrap();
        assert_eq!(prob.dim(), 4);
        assert_eq!(prob.rows().len(), 3);
        assert_eq!(prob.weights(), &vector(&[1.0, 1.0, 5.0, 5.0]));
        assert_eq!(prob.rows()[1].coeffs[2], 0.0);
        assert_eq!(prob.rows()[1].coeffs[3], 0.0);
    }

    #[test]
    fn origin_is_pushed_out_by_the_collinearity_barrier() {
        // D(0) = 0 < ε, so h_D(0) < 0 and the h_D row reads −(ε/ℓ)·3·u₂ ≥ ε
        let c = controller(SystemKind::Integrator);
        let s = ShapedState::at(Vector::zeros(2));
        assert!(c.hd_value(&s) < 0.0);
        let out = c.solve(&s).unwrap();
        assert!((&out.u - vector(&[0.0, -1.0 / 3.0])).amax() < 1e-12);
        assert!(out.omega.amax() < 1e-15 && out.w.abs() < 1e-15);
        assert_eq!(out.active_mask, 0b100);
    }

    #[test]
    fn far_from_obstacle_hd_row_is_slack() {
        let c = controller(SystemKind::Integrator);
        let s = ShapedState::at(vector(&[5.0, -5.0]));
        let prob = c.assemble(&s).unwrap();
        let sol = solve_active_set(&prob).unwrap();
        assert!(!sol.is_active(2));
        assert!(kkt_residuals(&prob, &sol).max() <= 1e-9);
    }

    #[test]
    fn large_q_recovers_nominal() {
        let mut c = controller(SystemKind::Integrator);
        c.gains.q = 1e9;
        let nominal = NominalController::new(c.system, c.clf.clone(), c.cbf.clone(), NominalGains::benchmark()).unwrap();
        for x in [vector(&[5.0, -5.0]), vector(&[0.0, -3.0]), vector(&[-2.0, 1.0])] {
            let out = c.solve(&ShapedState::at(x.clone())).unwrap();
            assert!(out.omega.amax() < 1e-6);
            if out.active_mask & 0b100 == 0 {
                let nom = nominal.solve(&x).unwrap();
                assert!((&out.u - &nom.u).amax() < 1e-6, "{x}");
            }
        }
    }

    #[test]
    fn cbf_row_holds_at_random_states() {
        let c = controller(SystemKind::F2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
            if c.cbf.value(&x) < 0.0 {
                continue;
            }
            let q = rotation_exp(&vector(&[rng.gen_range(-1.0..1.0)]), 1.0);
            let s = ShapedState { x, q };
            let prob = c.assemble(&s).unwrap();
            let sol = solve_active_set(&prob).unwrap();
            assert!(prob.rows()[1].slack(&sol.z) >= -1e-10);
            let (residual, _) = c.equilibrium_residual(&s).unwrap();
            let (dx, _, _) = c.closed_loop(&s).unwrap();
            assert!((residual - dx).amax() <= 1e-8);
        }
    }

    #[test]
    fn radial_reference_is_rejected() {
        let err = ShapedController::new(
            builtin_system(SystemKind::Integrator, 2).unwrap(),
            QuadraticClf::new(&[1.0, 1.0]).unwrap(),
            CircularObstacleCbf::new(&[0.0, 3.0], 1.5).unwrap(),
            ShapedGains::benchmark(),
        );
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }
}
