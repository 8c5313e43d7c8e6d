//! Fixed-step RK4 integration of the nominal and shaped closed loops.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::linalg::{rotation_retract, skew, RotationQ};
use crate::models::ControlAffineSystem;
use crate::nominal::{CaseLabel, NominalController};
use crate::shaped::{ShapedController, ShapedState};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_final: f64,
    pub convergence_radius: f64,
    /// Seconds the state must stay inside the convergence ball.
    pub convergence_hold: f64,
    pub monitors_tolerance: f64,
    /// Record every `output_stride`-th step (the final state is always recorded).
    pub output_stride: usize,
    /// Hold the control computed at the start of each step across all RK4 stages.
    pub sample_and_hold: bool,
    /// End the run as soon as convergence to a known equilibrium is confirmed.
    pub stop_on_convergence: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 1e-3,
            t_final: 50.0,
            convergence_radius: 1e-2,
            convergence_hold: 1.0,
            monitors_tolerance: 1e-6,
            output_stride: 1,
            sample_and_hold: false,
            stop_on_convergence: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dt", self.dt),
            ("t_final", self.t_final),
            ("convergence_radius", self.convergence_radius),
            ("convergence_hold", self.convergence_hold),
            ("monitors_tolerance", self.monitors_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        if self.dt >= self.t_final {
            return Err(Error::InvalidParameter(format!("dt = {} must be below t_final = {}", self.dt, self.t_final)));
        }
        if self.output_stride == 0 {
            return Err(Error::InvalidParameter("output_stride must be at least 1".into()));
        }
        Ok(())
    }

    fn steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }
}

/// Active-set label of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Nominal(CaseLabel),
    /// Bit mask over the CLF, CBF and `h_D` rows.
    Shaped(u8),
}

const SHAPED_ROWS: [&str; 3] = ["clf", "cbf", "hd"];

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Nominal(c) => f.write_str(c.name()),
            Label::Shaped(0) => f.write_str("none"),
            Label::Shaped(mask) => {
                let names: Vec<_> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| SHAPED_ROWS[i]).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Ok(c) = s.parse::<CaseLabel>() {
            return Ok(Label::Nominal(c));
        }
        if s == "none" {
            return Ok(Label::Shaped(0));
        }
        let mut mask = 0u8;
        for part in s.split('+') {
            let i = SHAPED_ROWS
                .iter()
                .position(|r| *r == part)
                .ok_or_else(|| Error::InvalidParameter(format!("unknown active-set label `{s}`")))?;
            mask |= 1 << i;
        }
        Ok(Label::Shaped(mask))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vector,
    pub q: Option<Matrix>,
    pub u: Vector,
    pub omega: Option<Vector>,
    pub w: f64,
    pub h: f64,
    pub v: f64,
    pub d: Option<f64>,
    pub h_d: Option<f64>,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Terminal {
    ConvergedTo(Vector),
    TFinalReached,
    Error(String),
}

impl Terminal {
    pub fn point(&self) -> Option<&Vector> {
        match self {
            Terminal::ConvergedTo(p) => Some(p),
            _ => None,
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::ConvergedTo(p) => {
                let coords: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
                write!(f, "converged_to({})", coords.join(","))
            }
            Terminal::TFinalReached => f.write_str("t_final_reached"),
            Terminal::Error(reason) => write!(f, "error({reason})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub samples: Vec<Sample>,
    pub terminal: Terminal,
    /// Minimum of `h` over every integration step.
    pub min_h: f64,
    pub min_h_d: Option<f64>,
    /// Largest `‖QᵀQ − I‖_F` over the run (shaped runs).
    pub max_orthogonality_defect: Option<f64>,
    /// Time at which the state entered the ball it then stayed in.
    pub converged_at: Option<f64>,
}

impl TrajectoryRecord {
    pub fn final_state(&self) -> Option<&Vector> {
        self.samples.last().map(|s| &s.x)
    }

    pub fn final_time(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Whether the run converged to within `radius` of `point`.
    pub fn converged_near(&self, point: &Vector, radius: f64) -> bool {
        self.terminal.point().is_some_and(|p| (p - point).norm() <= radius)
    }

    /// First time after which the state stays within `radius` of `point`.
    pub fn settled_near(&self, point: &Vector, radius: f64) -> Option<f64> {
        let mut entry = None;
        for s in &self.samples {
            if (&s.x - point).norm() <= radius {
                entry.get_or_insert(s.t);
            } else {
                entry = None;
            }
        }
        entry
    }
}

/// Tracks whether the state has settled at one of the known equilibria and
/// keeps a trailing window for the end-of-run stationarity test.
struct ConvergenceMonitor<'a> {
    known: &'a [Vector],
    radius: f64,
    hold: f64,
    candidate: Option<(usize, f64)>,
    window: VecDeque<(f64, Vector)>,
}

impl<'a> ConvergenceMonitor<'a> {
    fn new(known: &'a [Vector], cfg: &SimConfig) -> Self {
        ConvergenceMonitor {
            known,
            radius: cfg.convergence_radius,
            hold: cfg.convergence_hold,
            candidate: None,
            window: VecDeque::new(),
        }
    }

    /// Returns the equilibrium index and entry time once the hold is met.
    fn observe(&mut self, t: f64, x: &Vector) -> Option<(usize, f64)> {
        self.window.push_back((t, x.clone()));
        while self.window.front().is_some_and(|(t0, _)| t - t0 > self.hold + 1e-9) {
            self.window.pop_front();
        }
        let nearest = self
            .known
            .iter()
            .enumerate()
            .map(|(i, p)| (i, (x - p).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        match nearest {
            Some((i, dist)) if dist <= self.radius => {
                let (idx, since) = match self.candidate {
                    Some((j, since)) if j == i => (j, since),
                    _ => (i, t),
                };
                self.candidate = Some((idx, since));
                (t - since >= self.hold - 1e-9).then_some((idx, since))
            }
            _ => {
                self.candidate = None;
                None
            }
        }
    }

    /// Mean of the trailing window if it spans the hold and stays within the
    /// convergence radius of that mean.
    fn stationary_point(&self) -> Option<Vector> {
        let (first, last) = (self.window.front()?, self.window.back()?);
        if last.0 - first.0 < self.hold - 1e-9 {
            return None;
        }
        let mut mean = Vector::zeros(first.1.len());
        for (_, x) in &self.window {
            mean += x;
        }
        mean /= self.window.len() as f64;
        self.window.iter().all(|(_, x)| (x - &mean).norm() <= self.radius).then_some(mean)
    }
}

fn known_points(n: usize, known: &[Vector]) -> Vec<Vector> {
    let mut points = vec![Vector::zeros(n)];
    points.extend(known.iter().cloned());
    points
}

fn non_finite(x: &Vector) -> bool {
    x.iter().any(|v| !v.is_finite())
}

/// Integrates the nominal closed loop from `x0`.
///
/// `known` lists equilibria (besides the origin) that convergence is tested
/// against. Controller failures during the run end it with an error terminal.
pub fn simulate_nominal<S: ControlAffineSystem>(
    ctrl: &NominalController<S>,
    x0: &Vector,
    cfg: &SimConfig,
    known: &[Vector],
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    check_start(ctrl.cbf.value(x0), x0, ctrl.system.state_dim())?;
    let sys = &ctrl.system;
    let points = known_points(x0.len(), known);
    let mut monitor = ConvergenceMonitor::new(&points, cfg);
    let dt = cfg.dt;
    let mut x = x0.clone();
    let mut samples = Vec::new();
    let mut min_h = f64::INFINITY;
    let mut terminal = Terminal::TFinalReached;
    let mut converged_at = None;
    let steps = cfg.steps();

    for k in 0..=steps {
        let t = k as f64 * dt;
        let h = ctrl.cbf.value(&x);
        min_h = min_h.min(h);
        let out = match ctrl.solve(&x) {
            Ok(out) => out,
            Err(e) => {
                terminal = Terminal::Error(format!("t = {t}: {e}"));
                break;
            }
        };
        let done = k == steps;
        let converged = monitor.observe(t, &x);
        if k % cfg.output_stride == 0 || done || (converged.is_some() && cfg.stop_on_convergence) {
            samples.push(Sample {
                t,
                x: x.clone(),
                q: None,
                u: out.u.clone(),
                omega: None,
                w: out.w,
                h,
                v: ctrl.clf.value(&x),
                d: None,
                h_d: None,
                label: Label::Nominal(out.case),
            });
        }
        if let Some((idx, since)) = converged {
            if cfg.stop_on_convergence {
                terminal = Terminal::ConvergedTo(points[idx].clone());
                converged_at = Some(since);
                break;
            }
        }
        if done {
            break;
        }

        let u_held = out.u;
        let field = |y: &Vector| -> Result<Vector> {
            let u = if cfg.sample_and_hold { u_held.clone() } else { ctrl.solve(y)?.u };
            Ok(sys.drift(y) + sys.input_matrix(y) * u)
        };
        let step = (|| -> Result<Vector> {
            let k1 = field(&x)?;
            let k2 = field(&(&x + &k1 * (0.5 * dt)))?;
            let k3 = field(&(&x + &k2 * (0.5 * dt)))?;
            let k4 = field(&(&x + &k3 * dt))?;
            Ok(&x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0))
        })();
        match step {
            Ok(next) if !non_finite(&next) => x = next,
            Ok(_) => {
                terminal = Terminal::Error(Error::NonFinite { t: t + dt }.to_string());
                break;
            }
            Err(e) => {
                terminal = Terminal::Error(format!("t = {t}: {e}"));
                break;
            }
        }
    }

    if terminal == Terminal::TFinalReached {
        if let Some((idx, since)) = monitor.candidate.filter(|(_, since)| {
            samples.last().is_some_and(|s| s.t - since >= cfg.convergence_hold - 1e-9)
        }) {
            terminal = Terminal::ConvergedTo(points[idx].clone());
            converged_at = Some(since);
        } else if let Some(mean) = monitor.stationary_point() {
            terminal = Terminal::ConvergedTo(mean);
        }
    }
    Ok(TrajectoryRecord { samples, terminal, min_h, min_h_d: None, max_orthogonality_defect: None, converged_at })
}

fn check_start(h0: f64, x0: &Vector, n: usize) -> Result<()> {
    if x0.len() != n {
        return Err(Error::Dimension(format!("initial state has {} entries, system has n = {n}", x0.len())));
    }
    if non_finite(x0) {
        return Err(Error::InvalidParameter("initial state is not finite".into()));
    }
    if h0 < 0.0 {
        return Err(Error::InvalidParameter(format!("initial state {:?} is unsafe (h = {h0})", x0.as_slice())));
    }
    Ok(())
}

/// Integrates the shaped closed loop on `(x, Q)` from `(x0, I)`.
///
/// `Q` is carried as a matrix through the RK4 stages and retracted onto
/// `SO(n)` at every stage and after every step.
pub fn simulate_shaped<S: ControlAffineSystem>(
    ctrl: &ShapedController<S>,
    x0: &Vector,
    cfg: &SimConfig,
    known: &[Vector],
) -> Result<TrajectoryRecord> {
    cfg.validate()?;
    check_start(ctrl.cbf.value(x0), x0, ctrl.system.state_dim())?;
    let sys = &ctrl.system;
    let points = known_points(x0.len(), known);
    let mut monitor = ConvergenceMonitor::new(&points, cfg);
    let dt = cfg.dt;
    let mut state = ShapedState::at(x0.clone());
    let mut samples = Vec::new();
    let mut min_h = f64::INFINITY;
    let mut min_h_d = f64::INFINITY;
    let mut max_defect: f64 = 0.0;
    let mut terminal = Terminal::TFinalReached;
    let mut converged_at = None;
    let steps = cfg.steps();

    for k in 0..=steps {
        let t = k as f64 * dt;
        let h = ctrl.cbf.value(&state.x);
        let d = ctrl.collinearity_measure(&state);
        let h_d = ctrl.hd_value(&state);
        min_h = min_h.min(h);
        min_h_d = min_h_d.min(h_d);
        max_defect = max_defect.max(state.q.orthogonality_defect());
        let out = match ctrl.solve(&state) {
            Ok(out) => out,
            Err(e) => {
                terminal = Terminal::Error(format!("t = {t}: {e}"));
                break;
            }
        };
        let done = k == steps;
        let converged = monitor.observe(t, &state.x);
        if k % cfg.output_stride == 0 || done || (converged.is_some() && cfg.stop_on_convergence) {
            samples.push(Sample {
                t,
                x: state.x.clone(),
                q: Some(state.q.matrix().clone()),
                u: out.u.clone(),
                omega: Some(out.omega.clone()),
                w: out.w,
                h,
                v: ctrl.rotated_clf(&state).value,
                d: Some(d),
                h_d: Some(h_d),
                label: Label::Shaped(out.active_mask),
            });
        }
        if let Some((idx, since)) = converged {
            if cfg.stop_on_convergence {
                terminal = Terminal::ConvergedTo(points[idx].clone());
                converged_at = Some(since);
                break;
            }
        }
        if done {
            break;
        }

        let held = (out.u, out.omega);
        let field = |s: &ShapedState| -> Result<(Vector, Matrix)> {
            let (u, omega) = if cfg.sample_and_hold {
                held.clone()
            } else {
                let o = ctrl.solve(s)?;
                (o.u, o.omega)
            };
            let dx = sys.drift(&s.x) + sys.input_matrix(&s.x) * u;
            let dq = s.q.matrix() * skew(&omega);
            Ok((dx, dq))
        };
        let stage = |base: &ShapedState, k: &(Vector, Matrix), h: f64| -> Result<ShapedState> {
            Ok(ShapedState { x: &base.x + &k.0 * h, q: rotation_retract(&(base.q.matrix() + &k.1 * h))? })
        };
        let step = (|| -> Result<ShapedState> {
            let k1 = field(&state)?;
            let k2 = field(&stage(&state, &k1, 0.5 * dt)?)?;
            let k3 = field(&stage(&state, &k2, 0.5 * dt)?)?;
            let k4 = field(&stage(&state, &k3, dt)?)?;
            let dx = (k1.0 + k2.0 * 2.0 + k3.0 * 2.0 + k4.0) * (dt / 6.0);
            let dq = (k1.1 + k2.1 * 2.0 + k3.1 * 2.0 + k4.1) * (dt / 6.0);
            let q: RotationQ = rotation_retract(&(state.q.matrix() + dq))?;
            Ok(ShapedState { x: &state.x + dx, q })
        })();
        match step {
            Ok(next) if !non_finite(&next.x) => state = next,
            Ok(_) => {
                terminal = Terminal::Error(Error::NonFinite { t: t + dt }.to_string());
                break;
            }
            Err(e) => {
                terminal = Terminal::Error(format!("t = {t}: {e}"));
                break;
            }
        }
    }

    if terminal == Terminal::TFinalReached {
        if let Some((idx, since)) = monitor.candidate.filter(|(_, since)| {
            samples.last().is_some_and(|s| s.t - since >= cfg.convergence_hold - 1e-9)
        }) {
            terminal = Terminal::ConvergedTo(points[idx].clone());
            converged_at = Some(since);
        } else if let Some(mean) = monitor.stationary_point() {
            terminal = Terminal::ConvergedTo(mean);
        }
    }
    Ok(TrajectoryRecord {
        samples,
        terminal,
        min_h,
        min_h_d: Some(min_h_d),
        max_orthogonality_defect: Some(max_defect),
        converged_at,
    })
}

/// Terminal counts of a sweep.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSummary {
    /// Distinct convergence points (merged within `merge_radius`) with counts,
    /// in order of first appearance.
    pub attractors: Vec<(Vector, usize)>,
    pub t_final_reached: usize,
    pub errors: usize,
}

impl SweepSummary {
    pub fn from_records(records: &[Result<TrajectoryRecord>], merge_radius: f64) -> Self {
        let mut summary = SweepSummary::default();
        for r in records {
            match r.as_ref().map(|r| &r.terminal) {
                Ok(Terminal::ConvergedTo(p)) => {
                    match summary.attractors.iter_mut().find(|(q, _)| (q - p).norm() <= merge_radius) {
                        Some((_, count)) => *count += 1,
                        None => summary.attractors.push((p.clone(), 1)),
                    }
                }
                Ok(Terminal::TFinalReached) => summary.t_final_reached += 1,
                Ok(Terminal::Error(_)) | Err(_) => summary.errors += 1,
            }
        }
        summary
    }
}

/// Runs `run` on every initial condition, in parallel, keeping IC order.
pub fn sweep<F>(ics: &[Vector], run: F) -> Vec<Result<TrajectoryRecord>>
where
    F: Fn(&Vector) -> Result<TrajectoryRecord> + Sync + Send,
{
    ics.par_iter().map(run).collect()
}

/// `count` points on the circle of `radius` about `center`, the first at
/// angle `phase` (radians), counter-clockwise.
pub fn ring(center: &Vector, radius: f64, count: usize, phase: f64) -> Vec<Vector> {
    (0..count)
        .map(|k| {
            let a = phase + std::f64::consts::TAU * k as f64 / count as f64;
            let mut p = center.clone();
            p[0] += radius * a.cos();
            p[1] += radius * a.sin();
            p
        })
        .collect()
}
