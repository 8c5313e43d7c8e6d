//! Implementations of the `cbfsim` subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbf_shaping::equilibria::{find_boundary_equilibria, find_interior_equilibria, EquilibriumReport, SearchBox, Verdict};
use cbf_shaping::linalg::omega_dim;
use cbf_shaping::models::{SystemKind, ControlAffineSystem};
use cbf_shaping::scenario::{shaped_demo_ics, ControllerKind, Scenario};
use cbf_shaping::shaped::{ShapedController, ShapedState};
use cbf_shaping::sim::{sweep, SweepSummary, Terminal, TrajectoryRecord};
use cbf_shaping::{Error, RotationQ, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csv::{fmt_float, to_csv};
use crate::error::{CliError, CliResult};
use crate::scenario_file::ScenarioFile;
use crate::svg::{Marker, MarkerKind, Portrait, Trace, TraceStyle};

/// Largest relative gradient error `gradcheck` accepts.
pub const GRADCHECK_TOL: f64 = 1e-5;
const GRADCHECK_STEP: f64 = 1e-4;
/// Stride used for the CSV files written by `reproduce`.
const REPRODUCE_STRIDE: usize = 10;

fn write(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn sim_error(e: Error) -> CliError {
    match e {
        Error::InvalidParameter(_) | Error::Dimension(_) => CliError::Argument(e.to_string()),
        other => CliError::Simulation(other.to_string()),
    }
}

pub fn parse_point(text: &str) -> CliResult<Vector> {
    let values: Result<Vec<f64>, _> = text.split(',').map(|s| s.trim().parse::<f64>()).collect();
    values
        .map(Vector::from_vec)
        .map_err(|e| CliError::Argument(format!("cannot parse `{text}` as a comma-separated point: {e}")))
}

/// Sidecar summary of one run, written as TOML.
#[derive(Debug)]
struct RunSummary {
    controller: String,
    system: String,
    initial_condition: Vec<f64>,
    terminal: String,
    converged_to: Option<Vec<f64>>,
    converged_at: Option<f64>,
    final_time: f64,
    final_state: Vec<f64>,
    min_h: f64,
    min_h_d: Option<f64>,
    max_orthogonality_defect: Option<f64>,
    samples: usize,
    runtime_s: Option<f64>,
}

/// TOML float literal; shortest round-tripping form, exponent for tiny values.
fn toml_float(v: f64) -> String {
    match v {
        v if v.is_nan() => "nan".into(),
        f64::INFINITY => "inf".into(),
        f64::NEG_INFINITY => "-inf".into(),
        v => format!("{v:?}"),
    }
}

fn toml_array(v: &[f64]) -> String {
    format!("[{}]", v.iter().map(|x| toml_float(*x)).collect::<Vec<_>>().join(", "))
}

impl RunSummary {
    fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "controller = {:?}", self.controller);
        let _ = writeln!(out, "system = {:?}", self.system);
        let _ = writeln!(out, "initial_condition = {}", toml_array(&self.initial_condition));
        let _ = writeln!(out, "terminal = {:?}", self.terminal);
        if let Some(p) = &self.converged_to {
            let _ = writeln!(out, "converged_to = {}", toml_array(p));
        }
        if let Some(t) = self.converged_at {
            let _ = writeln!(out, "converged_at = {}", toml_float(t));
        }
        let _ = writeln!(out, "final_time = {}", toml_float(self.final_time));
        let _ = writeln!(out, "final_state = {}", toml_array(&self.final_state));
        let _ = writeln!(out, "min_h = {}", toml_float(self.min_h));
        if let Some(v) = self.min_h_d {
            let _ = writeln!(out, "min_h_d = {}", toml_float(v));
        }
        if let Some(v) = self.max_orthogonality_defect {
            let _ = writeln!(out, "max_orthogonality_defect = {}", toml_float(v));
        }
        let _ = writeln!(out, "samples = {}", self.samples);
        if let Some(v) = self.runtime_s {
            let _ = writeln!(out, "runtime_s = {}", toml_float(v));
        }
        out
    }

    fn new(scenario: &Scenario, kind: ControllerKind, x0: &Vector, rec: &TrajectoryRecord, runtime: Option<f64>) -> Self {
        RunSummary {
            controller: kind.to_string(),
            system: scenario.system.to_string(),
            initial_condition: x0.iter().copied().collect(),
            terminal: rec.terminal.to_string(),
            converged_to: rec.terminal.point().map(|p| p.iter().copied().collect()),
            converged_at: rec.converged_at,
            final_time: rec.final_time(),
            final_state: rec.final_state().map(|x| x.iter().copied().collect()).unwrap_or_default(),
            min_h: rec.min_h,
            min_h_d: rec.min_h_d,
            max_orthogonality_defect: rec.max_orthogonality_defect,
            samples: rec.samples.len(),
            runtime_s: runtime,
        }
    }
}

fn summary_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "trajectory".into());
    out.with_file_name(format!("{stem}.summary.toml"))
}

fn known_equilibria(scenario: &Scenario) -> CliResult<Vec<Vector>> {
    scenario.known_equilibria().map_err(|e| CliError::Simulation(format!("equilibrium search failed: {e}")))
}

pub fn simulate(scenario_path: &Path, controller: ControllerKind, ic: &str, out: &Path) -> CliResult<()> {
    let (_, scenario) = ScenarioFile::load(scenario_path)?;
    let x0 = parse_point(ic)?;
    if x0.len() != scenario.n {
        return Err(CliError::Argument(format!("--ic has {} entries, scenario has n = {}", x0.len(), scenario.n)));
    }
    let known = known_equilibria(&scenario)?;
    let start = Instant::now();
    let record = scenario.simulate(controller, &x0, &known).map_err(sim_error)?;
    let runtime = start.elapsed().as_secs_f64();
    write(out, &to_csv(&record))?;
    let summary = RunSummary::new(&scenario, controller, &x0, &record, Some(runtime));
    write(&summary_path(out), &summary.to_toml())?;
    println!("{} from {:?}: {} at t = {}, min_h = {:e}", controller, x0.as_slice(), record.terminal, record.final_time(), record.min_h);
    match &record.terminal {
        Terminal::Error(reason) => Err(CliError::Simulation(format!("at t = {}: {reason}", record.final_time()))),
        _ => Ok(()),
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_float).unwrap_or_default()
}

/// CSV table of equilibria: one row per equilibrium.
pub fn equilibria_table(reports: &[EquilibriumReport]) -> String {
    let mut out = String::from(
        "kind,x1,x2,theta,c,tangent_form_value,full_form_value,verdict,jacobian_verdict,eigenvalues,residual,continuum\n",
    );
    for r in reports {
        let eig: Vec<String> = r.eigenvalues.iter().map(|z| format!("{}{:+e}i", fmt_float(z.re), z.im)).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.kind,
            fmt_float(r.location[0]),
            fmt_float(r.location[1]),
            opt(r.theta),
            opt(r.c),
            opt(r.tangent_form_value),
            opt(r.full_form_value),
            r.verdict,
            r.jacobian_verdict.map(|v| v.to_string()).unwrap_or_default(),
            eig.join(";"),
            fmt_float(r.residual),
            r.continuum
        );
    }
    out
}

/// Boundary equilibria followed by interior ones.
pub fn analyze(scenario: &Scenario) -> CliResult<Vec<EquilibriumReport>> {
    let ctrl = scenario.nominal_controller().map_err(|e| CliError::Argument(e.to_string()))?;
    let mut reports = find_boundary_equilibria(&ctrl).map_err(|e| match e {
        Error::UnsupportedBoundary(_) => CliError::Argument(e.to_string()),
        other => CliError::Simulation(other.to_string()),
    })?;
    let search = SearchBox::square(scenario.search_half_width());
    reports.extend(find_interior_equilibria(&ctrl, &search).map_err(|e| CliError::Simulation(e.to_string()))?);
    Ok(reports)
}

pub fn equilibria(scenario_path: &Path, out: &Path) -> CliResult<()> {
    let (_, scenario) = ScenarioFile::load(scenario_path)?;
    let reports = analyze(&scenario)?;
    write(out, &equilibria_table(&reports))?;
    for r in &reports {
        let c = r.c.map(|c| format!(", c = {c:.9}")).unwrap_or_default();
        let cont = if r.continuum { " (continuum)" } else { "" };
        println!("{} ({:.9}, {:.9}){c}: {}{cont}", r.kind, r.location[0], r.location[1], r.verdict);
    }
    Ok(())
}

fn sweep_table(ics: &[Vector], records: &[cbf_shaping::Result<TrajectoryRecord>]) -> String {
    let mut out = String::from("index,x0_1,x0_2,terminal,final_time,min_h,min_h_d\n");
    for (i, (ic, rec)) in ics.iter().zip(records).enumerate() {
        let (terminal, t, min_h, min_h_d) = match rec {
            Ok(r) => (r.terminal.to_string(), fmt_float(r.final_time()), fmt_float(r.min_h), opt(r.min_h_d)),
            Err(e) => (format!("error({e})"), String::new(), String::new(), String::new()),
        };
        let x0_2 = ic.get(1).copied().map(fmt_float).unwrap_or_default();
        let _ = writeln!(out, "{i},{},{x0_2},\"{terminal}\",{t},{min_h},{min_h_d}", fmt_float(ic[0]));
    }
    out
}

fn print_summary(label: &str, records: &[cbf_shaping::Result<TrajectoryRecord>], radius: f64) {
    let summary = SweepSummary::from_records(records, radius);
    println!("{label}: {} runs", records.len());
    for (p, count) in &summary.attractors {
        println!("  {count:>3} converged to ({})", p.iter().map(|v| format!("{v:.5}")).collect::<Vec<_>>().join(", "));
    }
    if summary.t_final_reached > 0 {
        println!("  {:>3} reached t_final", summary.t_final_reached);
    }
    if summary.errors > 0 {
        println!("  {:>3} failed", summary.errors);
    }
}

fn run_all(scenario: &Scenario, kind: ControllerKind, ics: &[Vector], known: &[Vector]) -> Vec<cbf_shaping::Result<TrajectoryRecord>> {
    sweep(ics, |x0| scenario.simulate(kind, x0, known))
}

fn failures(records: &[cbf_shaping::Result<TrajectoryRecord>]) -> usize {
    records.iter().filter(|r| !matches!(r, Ok(r) if !matches!(r.terminal, Terminal::Error(_)))).count()
}

pub fn sweep_cmd(scenario_path: &Path, controller: ControllerKind, outdir: &Path) -> CliResult<()> {
    let (_, scenario) = ScenarioFile::load(scenario_path)?;
    let known = known_equilibria(&scenario)?;
    let ics = &scenario.initial_conditions;
    let records = run_all(&scenario, controller, ics, &known);
    for (i, rec) in records.iter().enumerate() {
        if let Ok(r) = rec {
            write(&outdir.join(format!("{controller}_{i:03}.csv")), &to_csv(r))?;
        }
    }
    write(&outdir.join(format!("{controller}_summary.csv")), &sweep_table(ics, &records))?;
    print_summary(controller.name(), &records, scenario.sim.convergence_radius);
    match failures(&records) {
        0 => Ok(()),
        n => Err(CliError::Simulation(format!("{n} of {} runs failed", records.len()))),
    }
}

/// Scenario file, controllers and initial conditions of a figure.
pub fn figure_setup(figure: u8) -> CliResult<(ScenarioFile, Vec<ControllerKind>)> {
    let (system, kinds) = match figure {
        1 => (SystemKind::Integrator, vec![ControllerKind::Nominal]),
        2 => (SystemKind::Integrator, vec![ControllerKind::Shaped]),
        3 => (SystemKind::F1, vec![ControllerKind::Nominal, ControllerKind::Shaped]),
        4 => (SystemKind::F2, vec![ControllerKind::Nominal, ControllerKind::Shaped]),
        other => return Err(CliError::Argument(format!("--figure must be 1, 2, 3 or 4, got {other}"))),
    };
    let mut file = ScenarioFile::benchmark(system);
    file.sim.output_stride = REPRODUCE_STRIDE;
    if figure == 2 {
        file.initial_conditions.ring = None;
        file.initial_conditions.points = shaped_demo_ics().iter().map(|p| p.iter().copied().collect()).collect();
    }
    Ok((file, kinds))
}

fn markers(reports: &[EquilibriumReport]) -> Vec<Marker> {
    let mut out = vec![Marker { at: [0.0, 0.0], kind: MarkerKind::Origin }];
    out.extend(reports.iter().filter(|r| !r.continuum).map(|r| Marker {
        at: [r.location[0], r.location[1]],
        kind: if r.verdict == Verdict::AsymptoticallyStable { MarkerKind::Stable } else { MarkerKind::Unstable },
    }));
    out
}

/// Semi-axes of the CLF level set through the first stable boundary
/// equilibrium, or through the far side of the obstacle.
fn level_set(scenario: &Scenario, reports: &[EquilibriumReport]) -> Option<[f64; 2]> {
    let clf = scenario.clf().ok()?;
    let through = reports
        .iter()
        .find(|r| r.verdict == Verdict::AsymptoticallyStable && !r.continuum)
        .map(|r| r.location.clone())
        .unwrap_or_else(|| {
            let c = Vector::from_column_slice(&scenario.obstacle_center);
            let dir = if c.norm() > 0.0 { c.normalize() } else { Vector::from_column_slice(&[0.0, 1.0]) };
            &c + dir * scenario.obstacle_radius
        });
    let level = clf.value(&through);
    let l = clf.lambda();
    Some([(2.0 * level / l[0]).sqrt(), (2.0 * level / l[1]).sqrt()])
}

pub fn reproduce(figure: u8, outdir: &Path) -> CliResult<()> {
    let (file, kinds) = figure_setup(figure)?;
    let scenario = file.to_scenario().map_err(CliError::Argument)?;
    let reports = analyze(&scenario)?;
    let known: Vec<Vector> = reports.iter().filter(|r| !r.continuum).map(|r| r.location.clone()).collect();
    let ics = &scenario.initial_conditions;
    write(&outdir.join(format!("fig{figure}_scenario.toml")), &file.to_toml())?;
    write(&outdir.join(format!("fig{figure}_equilibria.csv")), &equilibria_table(&reports))?;

    let mut traces = Vec::new();
    let mut failed = 0;
    for kind in kinds {
        let records = run_all(&scenario, kind, ics, &known);
        failed += failures(&records);
        for (i, rec) in records.iter().enumerate() {
            if let Ok(r) = rec {
                write(&outdir.join(format!("fig{figure}_{kind}_{i:02}.csv")), &to_csv(r))?;
                traces.push(Trace {
                    points: r.samples.iter().map(|s| [s.x[0], s.x[1]]).collect(),
                    style: match kind {
                        ControllerKind::Nominal => TraceStyle::Nominal,
                        ControllerKind::Shaped => TraceStyle::Shaped,
                    },
                });
            }
        }
        write(&outdir.join(format!("fig{figure}_{kind}_summary.csv")), &sweep_table(ics, &records))?;
        print_summary(&format!("figure {figure}, {kind}"), &records, scenario.sim.convergence_radius);
    }

    let portrait = Portrait {
        title: format!("Figure {figure}: {} system", scenario.system),
        traces,
        obstacle: ([scenario.obstacle_center[0], scenario.obstacle_center[1]], scenario.obstacle_radius),
        level_set: level_set(&scenario, &reports),
        markers: markers(&reports),
    };
    write(&outdir.join(format!("fig{figure}.svg")), &portrait.render())?;
    match failed {
        0 => Ok(()),
        n => Err(CliError::Simulation(format!("{n} runs failed"))),
    }
}

/// Worst relative gradient errors over random safe states of one controller.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub system: SystemKind,
    pub samples: usize,
    pub max_rel_x: f64,
    pub max_rel_q: f64,
    pub worst: Option<(ShapedState, f64)>,
}

fn relative(a: &Vector, b: &Vector) -> f64 {
    (a - b).amax() / a.amax().max(b.amax()).max(1.0)
}

fn random_state<S: ControlAffineSystem>(ctrl: &ShapedController<S>, rng: &mut ChaCha8Rng, half_width: f64) -> ShapedState {
    let n = ctrl.system.state_dim();
    loop {
        let x = Vector::from_fn(n, |_, _| rng.gen_range(-half_width..half_width));
        if ctrl.cbf.value(&x) < 0.0 || x.norm() < 0.1 {
            continue;
        }
        let k = omega_dim(n);
        let omega = Vector::from_fn(k, |_, _| rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        return ShapedState { x, q: RotationQ::identity(n).compose_exp(&omega, 1.0) };
    }
}

/// Compares the analytic gradients of `D` with finite differences at
/// `samples` seeded-random states. `corrupt` scales the analytic gradients
/// by `1 + corrupt` before comparing.
pub fn gradcheck_controller<S: ControlAffineSystem>(
    ctrl: &ShapedController<S>,
    system: SystemKind,
    samples: usize,
    seed: u64,
    half_width: f64,
    corrupt: f64,
) -> CliResult<GradcheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradcheckReport { system, samples, max_rel_x: 0.0, max_rel_q: 0.0, worst: None };
    for _ in 0..samples {
        let s = random_state(ctrl, &mut rng, half_width);
        let (gx, gq) = ctrl.grad_d(&s).map_err(|e| CliError::Simulation(format!("gradient at {:?}: {e}", s.x.as_slice())))?;
        let (fx, fq) = ctrl.finite_difference_grad_d(&s, GRADCHECK_STEP);
        let (ex, eq) = (relative(&(gx * (1.0 + corrupt)), &fx), relative(&(gq * (1.0 + corrupt)), &fq));
        report.max_rel_x = report.max_rel_x.max(ex);
        report.max_rel_q = report.max_rel_q.max(eq);
        if report.worst.as_ref().is_none_or(|(_, e)| ex.max(eq) > *e) {
            report.worst = Some((s, ex.max(eq)));
        }
    }
    Ok(report)
}

pub fn gradcheck(scenario_path: &Path, samples: usize, seed: u64, corrupt: bool) -> CliResult<()> {
    let (_, scenario) = ScenarioFile::load(scenario_path)?;
    if samples == 0 {
        eprintln!("warning: --samples 0 checks nothing");
        return Ok(());
    }
    let corrupt = if corrupt { 1e-3 } else { 0.0 };
    let half_width = scenario.search_half_width();
    let mut reports = vec![gradcheck_controller(
        &scenario.shaped_controller().map_err(|e| CliError::Argument(e.to_string()))?,
        scenario.system,
        samples,
        seed,
        half_width,
        corrupt,
    )?];
    if scenario.n == 2 && scenario.system != SystemKind::Synthetic {
        let mut synthetic = scenario.clone();
        synthetic.system = SystemKind::Synthetic;
        let ctrl = synthetic.shaped_controller().map_err(|e| CliError::Argument(e.to_string()))?;
        reports.push(gradcheck_controller(&ctrl, SystemKind::Synthetic, samples, seed, half_width, corrupt)?);
    }

    println!("{:<11} {:>8} {:>14} {:>14}", "system", "samples", "max_rel_dx", "max_rel_dq");
    for r in &reports {
        println!("{:<11} {:>8} {:>14.3e} {:>14.3e}", r.system.name(), r.samples, r.max_rel_x, r.max_rel_q);
    }
    let bad: Vec<&GradcheckReport> = reports.iter().filter(|r| r.max_rel_x.max(r.max_rel_q) > GRADCHECK_TOL).collect();
    if bad.is_empty() {
        println!("all gradients within {GRADCHECK_TOL:e}");
        return Ok(());
    }
    for r in &bad {
        if let Some((s, e)) = &r.worst {
            println!(
                "worst {} sample: x = {:?}, Q angle = {:?}, relative error {e:e}",
                r.system.name(),
                s.x.as_slice(),
                s.q.angle()
            );
        }
    }
    Err(CliError::Check(format!("gradient error above {GRADCHECK_TOL:e}")))
}
