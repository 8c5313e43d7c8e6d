//! The minimum-norm CLF-CBF QP controller
//!
//! ```text
//! min ‖u‖² + p w²   s.t.  L_fV + L_gV u ≤ −γ(V) + w
//!                          L_fh + L_gh u ≥ −α(h)
//! ```
//!
//! together with its closed-form solution on each activation region.

use std::fmt;
use std::str::FromStr;

use crate::models::{lie_derivatives, CircularObstacleCbf, ClassKappa, ControlAffineSystem, QuadraticClf};
use crate::qp::{solve_active_set, Constraint, QpProblem, QpSolution};
use crate::{Error, Result, Vector};

/// Slack below which a region inequality counts as a tie.
pub const REGION_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NominalGains {
    /// Weight of the CLF relaxation in the cost.
    pub p: f64,
    pub gamma: ClassKappa,
    pub alpha: ClassKappa,
}

impl NominalGains {
    pub fn new(p: f64, gamma: ClassKappa, alpha: ClassKappa) -> Result<Self> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::InvalidParameter(format!("p must be positive, got {p}")));
        }
        Ok(NominalGains { p, gamma, alpha })
    }

    /// `p = 5`, unit linear class-K functions.
    pub fn benchmark() -> Self {
        NominalGains { p: 5.0, gamma: ClassKappa::unit(), alpha: ClassKappa::unit() }
    }
}

/// Which constraints of the nominal QP are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CaseLabel {
    NoneActive,
    ClfOnly,
    CbfOnly,
    BothActive,
}

impl CaseLabel {
    pub fn from_mask(mask: u8) -> Self {
        match mask & 0b11 {
            0 => CaseLabel::NoneActive,
            1 => CaseLabel::ClfOnly,
            2 => CaseLabel::CbfOnly,
            _ => CaseLabel::BothActive,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CaseLabel::NoneActive => "none_active",
            CaseLabel::ClfOnly => "clf_only",
            CaseLabel::CbfOnly => "cbf_only",
            CaseLabel::BothActive => "both_active",
        }
    }

    /// The activation region on which this case's closed form is valid.
    pub fn region(self) -> Region {
        match self {
            CaseLabel::NoneActive => Region::Neither,
            CaseLabel::ClfOnly => Region::ClfOnly,
            CaseLabel::CbfOnly => Region::CbfOnly,
            CaseLabel::BothActive => Region::Both,
        }
    }
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CaseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [CaseLabel::NoneActive, CaseLabel::ClfOnly, CaseLabel::CbfOnly, CaseLabel::BothActive]
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown case label `{s}`")))
    }
}

/// Activation regions `Ω` of the state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    ClfOnly,
    CbfOnly,
    Both,
    Neither,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: Vector,
    /// CLF relaxation `δ(x)`.
    pub w: f64,
    pub case: CaseLabel,
    pub lambda_clf: f64,
    pub lambda_cbf: f64,
}

/// Scalars the closed forms are written in.
#[derive(Debug, Clone, PartialEq)]
pub struct LieTerms {
    pub v: f64,
    pub h: f64,
    pub lfv: f64,
    pub lgv: Vector,
    pub lfh: f64,
    pub lgh: Vector,
    /// `L_fV + γ(V)`
    pub clf_drive: f64,
    /// `L_fh + α(h)`
    pub cbf_margin: f64,
}

impl LieTerms {
    /// `L_gV L_ghᵀ`
    pub fn cross(&self) -> f64 {
        self.lgv.dot(&self.lgh)
    }

    /// `Δ = (L_gV L_ghᵀ)² − (p⁻¹ + ‖L_gV‖²)‖L_gh‖²`
    pub fn delta(&self, p: f64) -> f64 {
        let s = self.cross();
        s * s - (1.0 / p + self.lgv.norm_squared()) * self.lgh.norm_squared()
    }
}

/// The nominal controller for one system, CLF, obstacle and gain set.
#[derive(Debug, Clone)]
pub struct NominalController<S> {
    pub system: S,
    pub clf: QuadraticClf,
    pub cbf: CircularObstacleCbf,
    pub gains: NominalGains,
}

impl<S: ControlAffineSystem> NominalController<S> {
    pub fn new(system: S, clf: QuadraticClf, cbf: CircularObstacleCbf, gains: NominalGains) -> Result<Self> {
        let n = system.state_dim();
        if clf.dim() != n || cbf.center().len() != n {
            return Err(Error::Dimension(format!(
                "system has n = {n}, CLF has {}, obstacle center has {}",
                clf.dim(),
                cbf.center().len()
            )));
        }
        Ok(NominalController { system, clf, cbf, gains })
    }

    pub fn lie_terms(&self, x: &Vector) -> LieTerms {
        let v = self.clf.value(x);
        let h = self.cbf.value(x);
        let (lfv, lgv) = lie_derivatives(&self.system, x, &self.clf.gradient(x));
        let (lfh, lgh) = lie_derivatives(&self.system, x, &self.cbf.gradient(x));
        LieTerms {
            v,
            h,
            clf_drive: lfv + self.gains.gamma.value(v),
            cbf_margin: lfh + self.gains.alpha.value(h),
            lfv,
            lgv,
            lfh,
            lgh,
        }
    }

    /// Decision vector `(u, w)`; row 0 is the CLF row, row 1 the CBF row.
    pub fn assemble(&self, x: &Vector) -> Result<QpProblem> {
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("state is not finite".into()));
        }
        let t = self.lie_terms(x);
        let m = self.system.input_dim();
        let mut weights = Vector::from_element(m + 1, 1.0);
        weights[m] = self.gains.p;

        let mut clf_row = Vector::zeros(m + 1);
        clf_row.rows_mut(0, m).copy_from(&t.lgv);
        clf_row[m] = -1.0;
        let mut cbf_row = Vector::zeros(m + 1);
        cbf_row.rows_mut(0, m).copy_from(&t.lgh);

        QpProblem::new(
            weights,
            vec![
                Constraint::le(clf_row, -t.lfv - self.gains.gamma.value(t.v)),
                Constraint::ge(cbf_row, -t.lfh - self.gains.alpha.value(t.h)),
            ],
        )
    }

    pub fn solve(&self, x: &Vector) -> Result<ControlOutput> {
        let prob = self.assemble(x)?;
        let sol = solve_active_set(&prob)?;
        Ok(self.output_from(&sol))
    }

    fn output_from(&self, sol: &QpSolution) -> ControlOutput {
        let m = self.system.input_dim();
        ControlOutput {
            u: sol.z.rows(0, m).into_owned(),
            w: sol.z[m],
            case: CaseLabel::from_mask(sol.active_mask),
            lambda_clf: sol.multipliers[0],
            lambda_cbf: sol.multipliers[1],
        }
    }

    /// `k = −(L_fV + γ(V)) / (p⁻¹ + ‖L_gV‖²) · L_gVᵀ` (only the CLF row active).
    pub fn closed_form_case2(&self, x: &Vector) -> Vector {
        let t = self.lie_terms(x);
        let denom = 1.0 / self.gains.p + t.lgv.norm_squared();
        &t.lgv * (-t.clf_drive / denom)
    }

    /// `k = −‖L_gh‖⁻² (L_fh + α(h)) L_ghᵀ` (only the CBF row active).
    pub fn closed_form_case3(&self, x: &Vector) -> Result<Vector> {
        let t = self.lie_terms(x);
        let nh = t.lgh.norm_squared();
        if nh == 0.0 {
            return Err(Error::BranchInapplicable("L_gh is zero"));
        }
        Ok(&t.lgh * (-t.cbf_margin / nh))
    }

    /// Both rows active: `(u, λ₁, λ₂)` from the 2×2 KKT solve,
    /// `u = −λ₁ L_gVᵀ + λ₂ L_ghᵀ`.
    pub fn closed_form_case4(&self, x: &Vector) -> Result<(Vector, f64, f64)> {
        let t = self.lie_terms(x);
        let p = self.gains.p;
        let delta = t.delta(p);
        if delta >= -1e-12 {
            return Err(Error::BranchInapplicable("Δ is zero; use the CLF-only formula"));
        }
        let s = t.cross();
        let nv = 1.0 / p + t.lgv.norm_squared();
        let nh = t.lgh.norm_squared();
        let (a, b) = (t.clf_drive, t.cbf_margin);
        let lambda1 = (b * s - a * nh) / delta;
        let lambda2 = (b * nv - a * s) / delta;
        Ok((&t.lgh * lambda2 - &t.lgv * lambda1, lambda1, lambda2))
    }

    /// Activation region at `x`, from the KKT sign conditions with every
    /// denominator cleared:
    ///
    /// * CLF only: `a ≥ 0` and `b (p⁻¹ + ‖L_gV‖²) ≥ a s` (CBF slack of the case-2 input),
    /// * CBF only: `b ≤ 0` and `b s ≥ a ‖L_gh‖²` (CLF slack of the case-3 input),
    /// * neither: `a ≤ 0 ≤ b`,
    /// * both otherwise,
    ///
    /// with `a = L_fV + γ(V)`, `b = L_fh + α(h)`, `s = L_gV L_ghᵀ`. Since `Δ < 0`,
    /// the case-4 multipliers `λ₁ = (b s − a‖L_gh‖²)/Δ` and
    /// `λ₂ = (b(p⁻¹ + ‖L_gV‖²) − a s)/Δ` are non-negative exactly when both of
    /// the first two conditions fail.
    pub fn classify_region(&self, x: &Vector) -> Region {
        let t = self.lie_terms(x);
        let (a, b) = (t.clf_drive, t.cbf_margin);
        let s = t.cross();
        let nv = 1.0 / self.gains.p + t.lgv.norm_squared();
        let nh = t.lgh.norm_squared();
        let tie = REGION_TIE_TOL;
        if a <= tie * a.abs().max(1.0) && b >= -tie * b.abs().max(1.0) {
            return Region::Neither;
        }
        if a > 0.0 && b * nv - a * s >= -tie * (b * nv).abs().max((a * s).abs()).max(1.0) {
            return Region::ClfOnly;
        }
        if nh > 0.0 && b < 0.0 && b * s - a * nh >= -tie * (b * s).abs().max((a * nh).abs()).max(1.0) {
            return Region::CbfOnly;
        }
        Region::Both
    }

    /// The closed-form control selected by [`classify_region`](Self::classify_region),
    /// as `(u, w)`.
    pub fn closed_form(&self, x: &Vector) -> Result<(Vector, f64)> {
        let p = self.gains.p;
        match self.classify_region(x) {
            Region::Neither => Ok((Vector::zeros(self.system.input_dim()), 0.0)),
            Region::ClfOnly => {
                let t = self.lie_terms(x);
                let w = t.clf_drive / (p * (1.0 / p + t.lgv.norm_squared()));
                Ok((self.closed_form_case2(x), w))
            }
            Region::CbfOnly => Ok((self.closed_form_case3(x)?, 0.0)),
            Region::Both => match self.closed_form_case4(x) {
                Ok((u, lambda1, _)) => Ok((u, lambda1 / p)),
                Err(Error::BranchInapplicable(_)) => {
                    let t = self.lie_terms(x);
                    let w = t.clf_drive / (p * (1.0 / p + t.lgv.norm_squared()));
                    Ok((self.closed_form_case2(x), w))
                }
                Err(e) => Err(e),
            },
        }
    }

    /// `f_cl(x) = f(x) + g(x) k(x)`.
    pub fn closed_loop(&self, x: &Vector) -> Result<(Vector, ControlOutput)> {
        let out = self.solve(x)?;
        let dx = self.system.drift(x) + self.system.input_matrix(x) * &out.u;
        Ok((dx, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vector;
    use crate::models::{builtin_system, BuiltinSystem, SystemKind};
    use crate::qp::kkt_residuals;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn controller(kind: SystemKind) -> NominalController<BuiltinSystem> {
        NominalController::new(
            builtin_system(kind, 2).unwrap(),
            QuadraticClf::new(&[6.0, 1.0]).unwrap(),
            CircularObstacleCbf::new(&[0.0, 3.0], 1.5).unwrap(),
            NominalGains::benchmark(),
        )
        .unwrap()
    }

    #[test]
    fn assembles_integrator_rows() {
        let c = controller(SystemKind::Integrator);
        let prob = c.assemble(&vector(&[4.0, 4.0])).unwrap();
        let rows = prob.rows();
        assert_eq!(rows[0].coeffs, vector(&[24.0, 4.0, -1.0]));
        assert_eq!(rows[0].rhs, -56.0);
        assert_eq!(rows[1].coeffs, vector(&[4.0, 1.0, 0.0]));
        assert_eq!(rows[1].rhs, -7.375);
        assert_eq!(prob.weights(), &vector(&[1.0, 1.0, 5.0]));

        let origin = c.assemble(&Vector::zeros(2)).unwrap();
        assert_eq!(origin.rows()[0].rhs, 0.0);
        assert_eq!(origin.rows()[1].rhs, -3.375);
    }

    #[test]
    fn assembles_f1_rows() {
        let c = controller(SystemKind::F1);
        let prob = c.assemble(&vector(&[4.0, 4.0])).unwrap();
        let lfv = 0.1 * 32f64.sqrt() * 28.0;
        assert!((prob.rows()[0].rhs - (-56.0 - lfv)).abs() < 1e-12);
        assert!((lfv - 15.839191898578665).abs() < 1e-12);
    }

    #[test]
    fn clf_only_below_obstacle() {
        let c = controller(SystemKind::Integrator);
        let x = vector(&[0.0, -3.0]);
        let out = c.solve(&x).unwrap();
        // −V/(p⁻¹ + ‖∇V‖²) ∇V = −4.5/9.2 · (0, −3)
        let expected = vector(&[0.0, 4.5 * 3.0 / 9.2]);
        assert!((&out.u - &expected).amax() < 1e-12);
        assert!((out.u[1] - 1.46739).abs() < 1e-5);
        assert_eq!(out.case, CaseLabel::ClfOnly);
        // CBF slack at this input
        let slack = c.cbf.gradient(&x).dot(&out.u) + c.cbf.value(&x);
        assert!((slack - (16.875 - 6.0 * 1.4673913043478262)).abs() < 1e-9);
        assert!((slack - 8.07).abs() < 1e-2);
        assert!((c.closed_form_case2(&x) - expected).amax() < 1e-12);
        assert_eq!(c.classify_region(&x), Region::ClfOnly);
    }

    #[test]
    fn both_active_at_four_four() {
        let c = controller(SystemKind::Integrator);
        let x = vector(&[4.0, 4.0]);
        let case2 = c.closed_form_case2(&x);
        let expected = vector(&[24.0, 4.0]) * (-56.0 / 592.2);
        assert!((&case2 - &expected).amax() < 1e-12);
        assert!((case2[0] + 2.26950).abs() < 1e-5 && (case2[1] + 0.37825).abs() < 1e-5);
        let slack = c.cbf.gradient(&x).dot(&case2) + c.cbf.value(&x);
        assert!((slack + 2.081).abs() < 1e-3);

        let out = c.solve(&x).unwrap();
        assert_eq!(out.case, CaseLabel::BothActive);
        assert_eq!(c.classify_region(&x), Region::Both);
        let (u4, l1, l2) = c.closed_form_case4(&x).unwrap();
        assert!((&u4 - &out.u).amax() <= 1e-9);
        assert!((l1 - out.lambda_clf).abs() <= 1e-9 && (l2 - out.lambda_cbf).abs() <= 1e-9);
    }

    #[test]
    fn origin_is_at_rest() {
        let c = controller(SystemKind::Integrator);
        let out = c.solve(&Vector::zeros(2)).unwrap();
        assert_eq!(out.u, Vector::zeros(2));
        assert_eq!(out.w, 0.0);
        assert!(matches!(out.case, CaseLabel::NoneActive | CaseLabel::ClfOnly));
        assert_eq!(c.closed_form_case2(&Vector::zeros(2)), Vector::zeros(2));
    }

    #[test]
    fn case3_formula() {
        let c = controller(SystemKind::Integrator);
        let k = c.closed_form_case3(&vector(&[0.0, 6.0])).unwrap();
        assert!((k - vector(&[0.0, -1.125])).amax() < 1e-15);
        let boundary = c.cbf.boundary_point(0.3);
        assert!(c.closed_form_case3(&boundary).unwrap().amax() < 1e-15);
        assert!(matches!(c.closed_form_case3(&vector(&[0.0, 3.0])), Err(Error::BranchInapplicable(_))));

        let mut doubled = c.clone();
        doubled.gains.alpha = ClassKappa::linear(2.0).unwrap();
        let x = vector(&[2.0, 5.5]);
        let k1 = c.closed_form_case3(&x).unwrap();
        let k2 = doubled.closed_form_case3(&x).unwrap();
        assert!((k2 - k1 * 2.0).amax() < 1e-14);
    }

    #[test]
    fn delta_is_negative_off_zero_gradient() {
        let c = controller(SystemKind::Integrator);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
            let t = c.lie_terms(&x);
            let gv = c.clf.gradient(&x);
            let gh = c.cbf.gradient(&x);
            let direct = gv.dot(&gh).powi(2) - (0.2 + gv.norm_squared()) * gh.norm_squared();
            assert!((t.delta(5.0) - direct).abs() <= 1e-9 * direct.abs().max(1.0));
            assert!(t.delta(5.0) < 0.0);
        }
    }

    #[test]
    fn integrator_never_leaves_the_clf_row_inactive() {
        // f = 0 makes L_fV + γ(V) = γ(V) ≥ 0, so Ω_neither is only the origin
        let c = controller(SystemKind::Integrator);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
            assert_ne!(c.classify_region(&x), Region::Neither);
        }
    }

    #[test]
    fn closed_forms_match_active_set_on_random_states() {
        for kind in [SystemKind::Integrator, SystemKind::F1, SystemKind::F2, SystemKind::Synthetic] {
            let c = controller(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(17);
            let mut seen = std::collections::HashSet::new();
            for _ in 0..2000 {
                let x = vector(&[rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]);
                if c.cbf.value(&x) < 0.0 {
                    continue;
                }
                let prob = c.assemble(&x).unwrap();
                let sol = solve_active_set(&prob).unwrap();
                // residuals carry the magnitude of λ·a, which is large for the synthetic gain
                let scale = prob
                    .rows()
                    .iter()
                    .zip(&sol.multipliers)
                    .map(|(r, l)| l.abs() * r.coeffs.amax().max(r.rhs.abs()))
                    .fold(1.0, f64::max);
                let kkt = kkt_residuals(&prob, &sol);
                let lambda_max = sol.multipliers.iter().fold(1.0, |m: f64, l| m.max(l.abs()));
                assert!(kkt.stationarity.max(kkt.primal).max(kkt.dual) <= 1e-12 * scale, "{kind} at {x}");
                assert!(kkt.complementarity <= 1e-12 * scale * lambda_max, "{kind} at {x}");
                let out = c.solve(&x).unwrap();
                let (u, w) = c.closed_form(&x).unwrap();
                let tol = 1e-8 * out.u.amax().max(1.0);
                assert!((&u - &out.u).amax() <= tol, "{kind} at {x}: {u} vs {}", out.u);
                assert!((w - out.w).abs() <= tol);
                assert!((out.lambda_clf - c.gains.p * out.w).abs() <= 1e-9 * out.lambda_clf.abs().max(1.0));
                assert_eq!(c.classify_region(&x), out.case.region());
                assert!(prob.rows()[1].slack(&sol.z) >= -1e-12 * scale);
                seen.insert(out.case);
            }
            assert!(seen.contains(&CaseLabel::BothActive));
        }
    }
}
