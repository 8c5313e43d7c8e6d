//! Closed-loop equilibria of the nominal controller and their stability.
//!
//! Boundary equilibria are located by sweeping the obstacle circle, interior
//! ones by damped Newton on `f(x) − pγ(V) G∇V` from a grid of seeds. Boundary
//! points are classified by the curvature test `Tᵀ(H_V − cH_h)T ≻ 0` on the
//! tangent space and cross-checked against a finite-difference Jacobian.

use std::cmp::Ordering;
use std::f64::consts::TAU;
use std::fmt;

use nalgebra::Complex;
use rayon::prelude::*;

use crate::models::{ControlAffineSystem, QuadraticClf};
use crate::nominal::{NominalController, Region};
use crate::shaped::gamma_matrix;
use crate::{Error, Matrix, Result, Vector};

/// Angular spacing of the boundary sweep.
pub const SWEEP_STEP: f64 = 1e-3;
/// Bisection stops once the bracket is this narrow.
pub const BISECTION_TOL: f64 = 1e-12;
/// Roots closer than this are merged.
pub const DEDUP_TOL: f64 = 1e-6;
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Definiteness values within this band of zero give a marginal verdict.
pub const VERDICT_TOL: f64 = 1e-10;
/// Wider band for spectra of finite-difference Jacobians.
pub const SPECTRUM_TOL: f64 = 1e-6;
pub const JACOBIAN_STEP: f64 = 1e-5;
pub const GRID_SEEDS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EquilibriumKind {
    Origin,
    Interior,
    Boundary,
}

impl EquilibriumKind {
    pub fn name(self) -> &'static str {
        match self {
            EquilibriumKind::Origin => "origin",
            EquilibriumKind::Interior => "interior",
            EquilibriumKind::Boundary => "boundary",
        }
    }
}

impl fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    AsymptoticallyStable,
    Unstable,
    Marginal,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::AsymptoticallyStable => "asymptotically_stable",
            Verdict::Unstable => "unstable",
            Verdict::Marginal => "marginal",
        }
    }

    /// Stable when the value is clearly positive (a definiteness test).
    fn from_min_eigenvalue(v: f64) -> Self {
        Verdict::from_signed(v, VERDICT_TOL)
    }

    fn from_signed(v: f64, tol: f64) -> Self {
        if v > tol {
            Verdict::AsymptoticallyStable
        } else if v < -tol {
            Verdict::Unstable
        } else {
            Verdict::Marginal
        }
    }

    /// Verdict from the spectrum of a Jacobian (sign of the largest real part).
    pub fn from_spectrum(eigenvalues: &[Complex<f64>]) -> Self {
        let max_re = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        Verdict::from_signed(-max_re, SPECTRUM_TOL)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub location: Vector,
    pub kind: EquilibriumKind,
    /// Boundary angle about the obstacle center.
    pub theta: Option<f64>,
    /// `c` with `∇V(x*) = c∇h(x*)` (least-squares value for general drifts).
    pub c: Option<f64>,
    /// Smallest eigenvalue of `Tᵀ(H_V − cH_h)T`.
    pub tangent_form_value: Option<f64>,
    /// Smallest eigenvalue of the unrestricted `H_V − cH_h`.
    pub full_form_value: Option<f64>,
    /// Eigenvalue `−α'(0)` along `∇h`.
    pub normal_eigenvalue: Option<f64>,
    pub jacobian: Option<Matrix>,
    pub eigenvalues: Vec<Complex<f64>>,
    pub verdict: Verdict,
    /// Verdict from the numeric Jacobian, when it is defined.
    pub jacobian_verdict: Option<Verdict>,
    /// `‖f_cl(x*)‖` evaluated through the QP controller.
    pub residual: f64,
    /// The whole boundary consists of equilibria; `location` is one sample.
    pub continuum: bool,
}

/// Result of the curvature test at a boundary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentTest {
    pub verdict: Verdict,
    pub tangent_form_value: f64,
    pub full_form_value: f64,
    pub normal_eigenvalue: f64,
}

/// A state-feedback closed loop `f_cl(x)` together with a label identifying
/// the smooth piece it is evaluated on.
pub trait ClosedLoopField {
    fn state_dim(&self) -> usize;
    fn field(&self, x: &Vector) -> Result<(Vector, u8)>;
}

impl<S: ControlAffineSystem> ClosedLoopField for NominalController<S> {
    fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    fn field(&self, x: &Vector) -> Result<(Vector, u8)> {
        let (dx, out) = self.closed_loop(x)?;
        Ok((dx, out.case as u8))
    }
}

/// Central-difference Jacobian of `f_cl` at `x`.
///
/// Fails with [`Error::ActiveSetSwitch`], carrying both one-sided estimates,
/// if any stencil point lands on a different piece than `x`.
pub fn numeric_closed_loop_jacobian<F: ClosedLoopField + ?Sized>(field: &F, x: &Vector, step: f64) -> Result<Matrix> {
    let n = field.state_dim();
    let (f0, label) = field.field(x)?;
    let mut central = Matrix::zeros(n, n);
    let mut forward = Matrix::zeros(n, n);
    let mut backward = Matrix::zeros(n, n);
    let mut switched = false;
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let (fp, lp) = field.field(&xp)?;
        let (fm, lm) = field.field(&xm)?;
        switched |= lp != label || lm != label;
        central.set_column(j, &((&fp - &fm) / (2.0 * step)));
        forward.set_column(j, &((&fp - &f0) / step));
        backward.set_column(j, &((&f0 - &fm) / step));
    }
    if switched {
        return Err(Error::ActiveSetSwitch { forward: Box::new(forward), backward: Box::new(backward) });
    }
    Ok(central)
}

pub fn eigenvalues(m: &Matrix) -> Vec<Complex<f64>> {
    let mut ev: Vec<_> = m.complex_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap_or(Ordering::Equal).then(a.im.partial_cmp(&b.im).unwrap_or(Ordering::Equal)));
    ev
}

/// Curvature test at a boundary point with collinearity constant `c`.
///
/// The tangent basis is the eigenspace of `P_{∇h}` for its nonzero eigenvalue.
pub fn stability_tangent_test<S: ControlAffineSystem>(
    ctrl: &NominalController<S>,
    x: &Vector,
    c: f64,
) -> Result<TangentTest> {
    let (h, grad_h, hess_h) = ctrl.cbf.value_grad_hess(x);
    if h.abs() > BOUNDARY_TOL {
        return Err(Error::NotBoundaryPoint(h.abs()));
    }
    let form = ctrl.clf.hessian() - hess_h * c;
    let basis = tangent_basis(&grad_h);
    let restricted = basis.transpose() * &form * &basis;
    let tangent_form_value = restricted.symmetric_eigenvalues().min();
    Ok(TangentTest {
        verdict: Verdict::from_min_eigenvalue(tangent_form_value),
        tangent_form_value,
        full_form_value: form.symmetric_eigenvalues().min(),
        normal_eigenvalue: -ctrl.gains.alpha.derivative(0.0),
    })
}

/// Orthonormal basis (as columns) of `{v : vᵀn = 0}`.
fn tangent_basis(normal: &Vector) -> Matrix {
    let n = normal.len();
    let unit = normal.normalize();
    let eig = (Matrix::identity(n, n) - &unit * unit.transpose()).symmetric_eigen();
    let mut cols: Vec<usize> = (0..n).collect();
    cols.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap_or(Ordering::Equal));
    Matrix::from_fn(n, n - 1, |i, j| eig.eigenvectors[(i, cols[j])])
}

fn is_radial(clf: &QuadraticClf) -> bool {
    clf.is_radial()
}

/// Tangential component of the both-rows-active closed-loop field at angle `θ`
/// on the obstacle circle. On the boundary the active CBF row forces the normal
/// component to zero, so roots of this function are the candidate equilibria.
fn boundary_residual<S: ControlAffineSystem>(ctrl: &NominalController<S>, theta: f64) -> Result<f64> {
    let x = ctrl.cbf.boundary_point(theta);
    let (_, lambda1, lambda2) = ctrl.closed_form_case4(&x)?;
    let grad_v = ctrl.clf.gradient(&x);
    let grad_h = ctrl.cbf.gradient(&x);
    let gram = ctrl.system.gram(&x);
    let fcl = ctrl.system.drift(&x) + gram * (grad_h * lambda2 - grad_v * lambda1);
    Ok(fcl[1] * theta.cos() - fcl[0] * theta.sin())
}

fn bisect(mut lo: f64, mut hi: f64, mut f_lo: f64, residual: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    while hi - lo > BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        let f_mid = residual(mid)?;
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if (f_mid > 0.0) == (f_lo > 0.0) {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Boundary equilibria of the nominal closed loop for a planar system.
///
/// Returns roots in `Ω_both` whose multipliers are non-negative, sorted by
/// angle. When the whole circle is a root set (radial CLF, obstacle centered on
/// the origin) a single report flagged as a continuum is returned.
pub fn find_boundary_equilibria<S: ControlAffineSystem + Sync>(ctrl: &NominalController<S>) -> Result<Vec<EquilibriumReport>> {
    if ctrl.system.state_dim() != 2 {
        return Err(Error::UnsupportedBoundary(format!(
            "boundary sweep needs a planar circle, system has n = {}",
            ctrl.system.state_dim()
        )));
    }
    let samples = (TAU / SWEEP_STEP).ceil() as usize;
    let step = TAU / samples as f64;
    let values: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|k| boundary_residual(ctrl, k as f64 * step))
        .collect::<Result<_>>()?;

    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let all_zero = values.iter().all(|v| v.abs() <= 1e-9 * scale.max(1.0));
    if all_zero && is_radial(&ctrl.clf) {
        let x = ctrl.cbf.boundary_point(0.0);
        return Ok(vec![boundary_report(ctrl, x, 0.0, true)?]);
    }

    let mut roots = Vec::new();
    for k in 0..samples {
        let (a, b) = (values[k], values[(k + 1) % samples]);
        let theta = k as f64 * step;
        if a == 0.0 {
            roots.push(theta);
        } else if b != 0.0 && (a > 0.0) != (b > 0.0) {
            roots.push(bisect(theta, theta + step, a, |t| boundary_residual(ctrl, t))?);
        }
    }

    let mut reports: Vec<EquilibriumReport> = Vec::new();
    for theta in roots {
        let x = ctrl.cbf.boundary_point(theta);
        if ctrl.classify_region(&x) != Region::Both {
            continue;
        }
        let (_, lambda1, lambda2) = ctrl.closed_form_case4(&x)?;
        if lambda1 < -1e-10 || lambda2 < -1e-10 {
            continue;
        }
        if reports.iter().any(|r| (&r.location - &x).norm() <= DEDUP_TOL) {
            continue;
        }
        reports.push(boundary_report(ctrl, x, theta.rem_euclid(TAU), false)?);
    }
    reports.sort_by(|a, b| a.theta.partial_cmp(&b.theta).unwrap_or(Ordering::Equal));
    Ok(reports)
}

fn boundary_report<S: ControlAffineSystem>(
    ctrl: &NominalController<S>,
    x: Vector,
    theta: f64,
    continuum: bool,
) -> Result<EquilibriumReport> {
    let grad_v = ctrl.clf.gradient(&x);
    let grad_h = ctrl.cbf.gradient(&x);
    let c = grad_v.dot(&grad_h) / grad_h.norm_squared();
    let test = stability_tangent_test(ctrl, &x, c)?;
    let (fcl, _) = ctrl.closed_loop(&x)?;
    let (jacobian, eigenvalues, jacobian_verdict) = jacobian_analysis(ctrl, &x);
    Ok(EquilibriumReport {
        kind: EquilibriumKind::Boundary,
        theta: Some(theta),
        c: Some(c),
        tangent_form_value: Some(test.tangent_form_value),
        full_form_value: Some(test.full_form_value),
        normal_eigenvalue: Some(test.normal_eigenvalue),
        jacobian,
        eigenvalues,
        verdict: if continuum { Verdict::Marginal } else { test.verdict },
        jacobian_verdict,
        residual: fcl.norm(),
        continuum,
        location: x,
    })
}

fn jacobian_analysis<F: ClosedLoopField>(field: &F, x: &Vector) -> (Option<Matrix>, Vec<Complex<f64>>, Option<Verdict>) {
    match numeric_closed_loop_jacobian(field, x, JACOBIAN_STEP) {
        Ok(j) => {
            let ev = eigenvalues(&j);
            let verdict = Verdict::from_spectrum(&ev);
            (Some(j), ev, Some(verdict))
        }
        Err(_) => (None, Vec::new(), None),
    }
}

/// Axis-aligned box `[lower, upper]` seeded by a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchBox {
    pub lower: Vector,
    pub upper: Vector,
}

impl SearchBox {
    pub fn square(half_width: f64) -> Self {
        SearchBox {
            lower: Vector::from_element(2, -half_width),
            upper: Vector::from_element(2, half_width),
        }
    }

    fn seeds(&self, per_axis: usize) -> Vec<Vector> {
        let n = self.lower.len();
        let total = per_axis.pow(n as u32);
        (0..total)
            .map(|mut idx| {
                Vector::from_fn(n, |i, _| {
                    let k = idx % per_axis;
                    idx /= per_axis;
                    let t = k as f64 / (per_axis - 1) as f64;
                    self.lower[i] + t * (self.upper[i] - self.lower[i])
                })
            })
            .collect()
    }
}

/// `f(x) − pγ(V) G∇V`, zero exactly at interior equilibria in `Ω_clf_only`.
fn interior_residual<S: ControlAffineSystem>(ctrl: &NominalController<S>, x: &Vector) -> Vector {
    let v = ctrl.clf.value(x);
    let k = ctrl.gains.p * ctrl.gains.gamma.value(v);
    ctrl.system.drift(x) - ctrl.system.gram(x) * ctrl.clf.gradient(x) * k
}

fn interior_residual_jacobian<S: ControlAffineSystem>(ctrl: &NominalController<S>, x: &Vector) -> Result<Matrix> {
    let p = ctrl.gains.p;
    let v = ctrl.clf.value(x);
    let (grad_v, hess_v) = ctrl.clf.grad_hess(x);
    let gram = ctrl.system.gram(x);
    let g_grad = &gram * &grad_v;
    let d_gv = &gram * hess_v + gamma_matrix(&ctrl.system, &grad_v, x);
    Ok(ctrl.system.drift_jacobian(x)?
        - (g_grad * grad_v.transpose()) * (p * ctrl.gains.gamma.derivative(v))
        - d_gv * (p * ctrl.gains.gamma.value(v)))
}

fn newton(ctrl: &NominalController<impl ControlAffineSystem>, seed: &Vector) -> Option<Vector> {
    let mut x = seed.clone();
    let mut r = interior_residual(ctrl, &x);
    for _ in 0..100 {
        if r.norm() <= 1e-13 {
            break;
        }
        let j = interior_residual_jacobian(ctrl, &x).ok()?;
        let dx = j.full_piv_lu().solve(&(-&r))?;
        let mut t = 1.0;
        loop {
            let trial = &x + &dx * t;
            let rt = interior_residual(ctrl, &trial);
            if rt.norm() < r.norm() || t < 1e-6 {
                x = trial;
                r = rt;
                break;
            }
            t *= 0.5;
        }
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e6 {
            return None;
        }
    }
    (r.norm() <= 1e-10).then_some(x)
}

/// Interior equilibria (`x ≠ 0`, `h > 0`, only the CLF row active) in `search`.
///
/// Results are deduplicated and sorted lexicographically.
pub fn find_interior_equilibria<S: ControlAffineSystem + Sync>(
    ctrl: &NominalController<S>,
    search: &SearchBox,
) -> Result<Vec<EquilibriumReport>> {
    if search.lower.len() != ctrl.system.state_dim() || search.upper.len() != search.lower.len() {
        return Err(Error::Dimension("search box does not match the state dimension".into()));
    }
    let candidates: Vec<Option<Vector>> = search.seeds(GRID_SEEDS).par_iter().map(|s| newton(ctrl, s)).collect();

    let mut roots: Vec<Vector> = Vec::new();
    for x in candidates.into_iter().flatten() {
        if x.norm() <= DEDUP_TOL || ctrl.cbf.value(&x) <= 0.0 {
            continue;
        }
        if ctrl.classify_region(&x) != Region::ClfOnly {
            continue;
        }
        if roots.iter().all(|r| (r - &x).norm() > DEDUP_TOL) {
            roots.push(x);
        }
    }
    roots.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(p, q)| p.partial_cmp(q).unwrap_or(Ordering::Equal))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    });

    roots
        .into_iter()
        .map(|x| {
            let (fcl, _) = ctrl.closed_loop(&x)?;
            let (jacobian, eigenvalues, jacobian_verdict) = jacobian_analysis(ctrl, &x);
            Ok(EquilibriumReport {
                kind: EquilibriumKind::Interior,
                theta: None,
                c: None,
                tangent_form_value: None,
                full_form_value: None,
                normal_eigenvalue: None,
                jacobian,
                eigenvalues,
                verdict: jacobian_verdict.unwrap_or(Verdict::Marginal),
                jacobian_verdict,
                residual: fcl.norm(),
                continuum: false,
                location: x,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::vector;
    use crate::models::{builtin_system, BuiltinSystem, CircularObstacleCbf, SystemKind};
    use crate::nominal::NominalGains;

    fn controller(kind: SystemKind, lambda: &[f64], center: &[f64], r: f64) -> NominalController<BuiltinSystem> {
        NominalController::new(
            builtin_system(kind, 2).unwrap(),
            QuadraticClf::new(lambda).unwrap(),
            CircularObstacleCbf::new(center, r).unwrap(),
            NominalGains::benchmark(),
        )
        .unwrap()
    }

    fn benchmark(kind: SystemKind) -> NominalController<BuiltinSystem> {
        controller(kind, &[6.0, 1.0], &[0.0, 3.0], 1.5)
    }

    #[test]
    fn benchmark_scenario_boundary_equilibria() {
        let reports = find_boundary_equilibria(&benchmark(SystemKind::Integrator)).unwrap();
        // Λx = c(x − x_c) on the circle: x₁ = 0 with c = 3, or c = 6 with x₂ = 3.6
        let side = (2.25f64 - 0.36).sqrt();
        let expected = [(vector(&[side, 3.6]), 6.0), (vector(&[0.0, 4.5]), 3.0), (vector(&[-side, 3.6]), 6.0)];
        assert_eq!(reports.len(), 3, "{reports:#?}");
        for (r, (x, c)) in reports.iter().zip(&expected) {
            assert!((&r.location - x).amax() <= 1e-9, "{}", r.location);
            assert!((r.c.unwrap() - c).abs() <= 1e-9);
            assert!(r.residual <= 1e-8);
            assert!(!r.continuum);
            assert_eq!(Some(r.verdict), r.jacobian_verdict);
        }
        let top = &reports[1];
        assert!((top.tangent_form_value.unwrap() - 3.0).abs() <= 1e-9);
        assert!((top.full_form_value.unwrap() + 2.0).abs() <= 1e-9);
        assert_eq!(top.verdict, Verdict::AsymptoticallyStable);
        // tangent (−0.6, x₁)/1.5 against diag(0, −5)
        for r in [&reports[0], &reports[2]] {
            assert!((r.tangent_form_value.unwrap() + 5.0 * 1.89 / 2.25).abs() <= 1e-9);
            assert_eq!(r.verdict, Verdict::Unstable);
        }
    }

    #[test]
    fn boundary_jacobian_spectrum() {
        let c = benchmark(SystemKind::Integrator);
        let j = numeric_closed_loop_jacobian(&c, &vector(&[0.0, 4.5]), JACOBIAN_STEP).unwrap();
        let ev = eigenvalues(&j);
        // normal direction: −α'(0); tangent direction: −λ₁ times the tangent form value
        let lambda1 = c.gains.p * 10.125;
        let expected = [-lambda1 * 3.0, -1.0];
        for (e, want) in ev.iter().zip(expected) {
            assert!(e.im.abs() < 1e-9);
            assert!((e.re - want).abs() <= 1e-4 * want.abs(), "{ev:?}");
        }
        assert!((expected[0] + 151.875).abs() < 1e-12);
    }

    #[test]
    fn radial_clf_centered_obstacle_is_a_continuum() {
        let c = controller(SystemKind::Integrator, &[1.0, 1.0], &[0.0, 0.0], 1.5);
        let reports = find_boundary_equilibria(&c).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(reports[0].continuum);
        assert_eq!(reports[0].verdict, Verdict::Marginal);
    }

    #[test]
    fn swapped_lambda_is_unstable() {
        let c = controller(SystemKind::Integrator, &[1.0, 6.0], &[0.0, 3.0], 1.5);
        let x = vector(&[0.0, 4.5]);
        // ∇V = (0, 27) = c (0, 1.5)
        let test = stability_tangent_test(&c, &x, 18.0).unwrap();
        assert!((test.tangent_form_value - (1.0 - 18.0)).abs() < 1e-12);
        assert_eq!(test.verdict, Verdict::Unstable);
        let reports = find_boundary_equilibria(&c).unwrap();
        let top = reports.iter().find(|r| (&r.location - &x).amax() < 1e-9).unwrap();
        assert_eq!(top.verdict, Verdict::Unstable);
        assert_eq!(top.jacobian_verdict, Some(Verdict::Unstable));
    }

    #[test]
    fn radial_clf_off_center_obstacle() {
        let c = controller(SystemKind::Integrator, &[1.0, 1.0], &[0.0, 3.0], 1.5);
        let reports = find_boundary_equilibria(&c).unwrap();
        assert_eq!(reports.len(), 1);
        let r = &reports[0];
        // c = x₂/(x₂ − 3) = 3 at (0, 4.5); tangent value 1 − c
        assert!((r.c.unwrap() - 3.0).abs() < 1e-9);
        assert!((r.tangent_form_value.unwrap() + 2.0).abs() < 1e-9);
        assert_eq!(r.verdict, Verdict::Unstable);
        assert_eq!(r.jacobian_verdict, Some(Verdict::Unstable));
    }

    #[test]
    fn non_boundary_point_is_rejected() {
        let c = benchmark(SystemKind::Integrator);
        assert!(matches!(stability_tangent_test(&c, &vector(&[4.0, 4.0]), 1.0), Err(Error::NotBoundaryPoint(_))));
    }

    #[test]
    fn reflection_symmetry_of_spectrum() {
        let c = benchmark(SystemKind::Integrator);
        let a = eigenvalues(&numeric_closed_loop_jacobian(&c, &vector(&[0.3, -2.0]), 1e-5).unwrap());
        let b = eigenvalues(&numeric_closed_loop_jacobian(&c, &vector(&[-0.3, -2.0]), 1e-5).unwrap());
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).norm() <= 1e-6 * p.norm().max(1.0));
        }
    }

    #[test]
    fn origin_jacobian_vanishes() {
        // the closed loop is cubic at the origin: −pV∇V to leading order
        let c = benchmark(SystemKind::Integrator);
        let j = match numeric_closed_loop_jacobian(&c, &Vector::zeros(2), JACOBIAN_STEP) {
            Ok(j) => j,
            Err(Error::ActiveSetSwitch { forward, backward }) => {
                assert!(backward.amax() < 1e-8);
                *forward
            }
            Err(e) => panic!("{e}"),
        };
        assert!(j.amax() < 1e-8);
        assert_eq!(Verdict::from_spectrum(&eigenvalues(&j)), Verdict::Marginal);
    }

    #[test]
    fn integrator_has_no_interior_equilibria() {
        let found = find_interior_equilibria(&benchmark(SystemKind::Integrator), &SearchBox::square(6.0)).unwrap();
        assert!(found.is_empty());
    }

    #[test]
    fn f1_interior_equilibrium() {
        let c = benchmark(SystemKind::F1);
        let found = find_interior_equilibria(&c, &SearchBox::square(6.0)).unwrap();
        assert_eq!(found.len(), 1);
        let x = &found[0].location;
        // 6x₁ = x₂ and 0.1‖x‖ = 5V·6x₁
        let x1 = (0.1 * 37f64.sqrt() / 630.0).sqrt();
        assert!((x - vector(&[x1, 6.0 * x1])).amax() <= 1e-9);
        assert!(found[0].residual <= 1e-8);
        assert_eq!(found[0].verdict, Verdict::AsymptoticallyStable);
    }

    #[test]
    fn f2_interior_equilibria_are_consistent() {
        let c = benchmark(SystemKind::F2);
        let found = find_interior_equilibria(&c, &SearchBox::square(6.0)).unwrap();
        assert!(!found.is_empty());
        for r in &found {
            assert!(r.residual <= 1e-8);
            assert!(interior_residual(&c, &r.location).norm() <= 1e-9);
        }
    }

    #[test]
    fn f2_boundary_roots_are_equilibria() {
        let c = benchmark(SystemKind::F2);
        for r in find_boundary_equilibria(&c).unwrap() {
            assert!(r.residual <= 1e-8, "{r:?}");
            assert!(c.cbf.value(&r.location).abs() <= 1e-9);
            assert!(r.c.unwrap() >= 0.0);
        }
    }

    #[test]
    fn unsupported_dimension() {
        let c = NominalController::new(
            builtin_system(SystemKind::Integrator, 3).unwrap(),
            QuadraticClf::new(&[6.0, 1.0, 1.0]).unwrap(),
            CircularObstacleCbf::new(&[0.0, 3.0, 0.0], 1.5).unwrap(),
            NominalGains::benchmark(),
        )
        .unwrap();
        assert!(matches!(find_boundary_equilibria(&c), Err(Error::UnsupportedBoundary(_))));
    }
}
