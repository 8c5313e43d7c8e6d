use cbf_shaping::linalg::{orthogonality_defect, vector};
use cbf_shaping::models::{ControlAffineSystem, SystemKind};
use cbf_shaping::nominal::CaseLabel;
use cbf_shaping::scenario::{ControllerKind, Scenario};
use cbf_shaping::shaped::ShapedState;
use cbf_shaping::sim::{sweep, Label, SweepSummary, TrajectoryRecord};
use cbf_shaping::Vector;

fn scenario(system: SystemKind, t_final: f64, dt: f64) -> Scenario {
    let mut s = Scenario::benchmark(system);
    s.sim.t_final = t_final;
    s.sim.dt = dt;
    s.sim.stop_on_convergence = false;
    s
}

fn simulate(s: &Scenario, kind: ControllerKind, x0: &[f64]) -> TrajectoryRecord {
    let known = s.known_equilibria().unwrap();
    s.simulate(kind, &vector(x0), &known).unwrap()
}

#[test]
fn halving_the_step_keeps_attractors_and_final_states() {
    let cases: [(SystemKind, ControllerKind, [f64; 2], f64); 3] = [
        (SystemKind::Integrator, ControllerKind::Nominal, [4.0, 4.0], 20.0),
        (SystemKind::Integrator, ControllerKind::Nominal, [0.0, -3.0], 20.0),
        (SystemKind::Integrator, ControllerKind::Shaped, [4.0, 4.0], 8.0),
    ];
    for (system, kind, x0, t_final) in cases {
        let coarse = simulate(&scenario(system, t_final, 1e-3), kind, &x0);
        let fine = simulate(&scenario(system, t_final, 5e-4), kind, &x0);
        let (a, b) = (coarse.final_state().unwrap(), fine.final_state().unwrap());
        assert!((a - b).norm() <= 1e-4, "{kind} from {x0:?}: {a} vs {b}");
        assert_eq!(coarse.terminal.point().is_some(), fine.terminal.point().is_some());
        if let (Some(p), Some(q)) = (coarse.terminal.point(), fine.terminal.point()) {
            assert!((p - q).norm() <= 1e-2);
        }
    }
}

#[test]
fn clf_row_holds_with_the_recorded_slack_off_the_boundary() {
    for (system, x0) in [(SystemKind::Integrator, [0.0, -3.0]), (SystemKind::F1, [-5.0, -2.0]), (SystemKind::F2, [5.0, 1.0])] {
        let s = scenario(system, 10.0, 1e-3);
        let rec = simulate(&s, ControllerKind::Nominal, &x0);
        let sys = s.build_system().unwrap();
        let clf = s.clf().unwrap();
        let mut checked = 0;
        for sample in rec.samples.iter().filter(|p| p.label == Label::Nominal(CaseLabel::ClfOnly)) {
            let grad = clf.gradient(&sample.x);
            let vdot = grad.dot(&(sys.drift(&sample.x) + sys.input_matrix(&sample.x) * &sample.u));
            let bound = -s.nominal.gamma.value(sample.v) + sample.w;
            assert!(vdot <= bound + 1e-9 * (1.0 + sample.v), "{system} t = {}: {vdot} > {bound}", sample.t);
            checked += 1;
        }
        assert!(checked > 100, "{system}: only {checked} clf-only samples");
    }
}

#[test]
fn energy_decreases_between_clf_only_samples() {
    let s = scenario(SystemKind::Integrator, 5.0, 1e-3);
    let rec = simulate(&s, ControllerKind::Nominal, &[0.0, -3.0]);
    for pair in rec.samples.windows(2) {
        if pair.iter().all(|p| p.label == Label::Nominal(CaseLabel::ClfOnly)) {
            assert!(pair[1].v <= pair[0].v + 1e-9, "V rose at t = {}", pair[1].t);
        }
    }
}

#[test]
fn shaped_run_keeps_q_orthogonal_and_h_d_nonnegative() {
    let s = scenario(SystemKind::Integrator, 6.0, 1e-3);
    let x0 = vector(&[4.0, 4.0]);
    let ctrl = s.shaped_controller().unwrap();
    assert!(ctrl.hd_value(&ShapedState::at(x0.clone())) >= 0.0);
    let rec = s.simulate(ControllerKind::Shaped, &x0, &[]).unwrap();
    for sample in &rec.samples {
        let q = sample.q.as_ref().expect("shaped samples carry Q");
        assert!(orthogonality_defect(q) <= 1e-9, "t = {}", sample.t);
        assert!(sample.h >= -1e-6);
        assert!(sample.h_d.unwrap() >= -1e-6, "t = {}: h_D = {:?}", sample.t, sample.h_d);
    }
    assert!(rec.max_orthogonality_defect.unwrap() <= 1e-9);
}

#[test]
fn sweep_keeps_initial_condition_order() {
    let s = scenario(SystemKind::Integrator, 3.0, 1e-3);
    let ics: Vec<Vector> = [[4.0, 4.0], [0.0, -3.0], [-4.0, 4.0], [5.0, 0.0]].iter().map(|p| vector(p)).collect();
    let records = sweep(&ics, |x0| s.simulate(ControllerKind::Nominal, x0, &[]));
    assert_eq!(records.len(), ics.len());
    for (ic, rec) in ics.iter().zip(&records) {
        assert_eq!(&rec.as_ref().unwrap().samples[0].x, ic);
    }
    assert!(sweep(&[], |x0| s.simulate(ControllerKind::Nominal, x0, &[])).is_empty());
}

#[test]
fn nominal_ring_sweep_reaches_the_boundary_attractor() {
    let mut s = Scenario::benchmark(SystemKind::Integrator);
    s.sim.output_stride = 100;
    let known = s.known_equilibria().unwrap();
    let records = sweep(&s.initial_conditions, |x0| s.simulate(ControllerKind::Nominal, x0, &known));
    let summary = SweepSummary::from_records(&records, 1e-2);
    let stuck = summary.attractors.iter().find(|(p, _)| (p - vector(&[0.0, 4.5])).norm() <= 1e-2);
    assert!(stuck.is_some_and(|(_, n)| *n >= 1), "{summary:?}");
    assert_eq!(summary.errors, 0);
    for rec in records.iter().flatten() {
        assert!(rec.min_h >= -1e-6);
    }
}
