use nlpf::config::{default_1d, FieldProfile, RunConfig};
use nlpf::diagnostics::*;
use nlpf::solver::{self, SolverConfig, Trajectory};
use nlpf::study::single_cell_robin_exact;
use nlpf::Error;

fn cosine(base: f64, amplitude: f64) -> FieldProfile {
    FieldProfile { kind: "cosine".into(), base, amplitude, ..Default::default() }
}

fn coupled(cells: usize, horizon: f64) -> RunConfig {
    let mut c = default_1d(cells);
    c.thermo.lambda = [0.1, 0.0];
    c.thermo.sigma = [0.05, 0.0];
    c.kernel.kind = "gaussian".into();
    c.kernel.amplitude = 0.1;
    c.init.theta = cosine(1.0, 0.5);
    c.init.chi = vec![cosine(0.5, 0.2)];
    c.solver.dt = 1e-2;
    c.solver.horizon = horizon;
    c.solver.n_reg = 0.0;
    c
}

fn run(c: &RunConfig) -> Trajectory {
    let b = c.build().unwrap();
    solver::run(&b.system, b.init.clone(), &b.solver).unwrap()
}

fn budget(tr: &Trajectory) -> f64 {
    energy_budget(&tr.records).unwrap().max_budget_residual
}

#[test]
fn robin_heating_balances_the_budget() {
    let mut c = coupled(16, 0.3);
    c.boundary.gamma = 2.0;
    c.boundary.theta_gamma = 3.0;
    let tr = run(&c);
    let e = energy_budget(&tr.records).unwrap();
    assert!(e.max_budget_residual < 1e-12, "{e:?}");
    assert!(e.boundary_heat < 0.0, "heat must flow in: {e:?}");
    assert!(e.last > e.initial);
}

#[test]
fn ramped_boundary_temperature() {
    let mut c = coupled(8, 0.2);
    c.boundary.gamma = 1.0;
    c.boundary.ramp = 0.5;
    let tr = run(&c);
    assert!(budget(&tr) < 1e-12);
    c.boundary.ramp = -10.0;
    assert!(c.build().unwrap_err().is_validation());
}

#[test]
fn interval_average_lag_conserves_energy() {
    let mut c = coupled(16, 0.3);
    c.solver.lag = "interval_average".into();
    c.solver.lag_interval = 4;
    let tr = run(&c);
    assert!(budget(&tr) < 1e-12);
    assert!(entropy_production(&tr.records).worst_relative_defect >= -1e-8);
    c.solver.lag = "sometimes".into();
    assert!(matches!(c.build(), Err(Error::Config(_))));
}

#[test]
fn two_dimensional_run_conserves_energy() {
    let text = r#"
grid.dim = 2
grid.lengths = [1.0, 0.5]
grid.cells = [6, 4]
thermo.lambda = [0.2, 0.0]
kernel.kind = "gaussian"
kernel.amplitude = 0.2
init.theta = { kind = "bump", base = 1.0, amplitude = 0.5, width = 0.3 }
init.chi = [{ kind = "ramp", base = 0.3, amplitude = 0.4, axis = 1 }]
solver.dt = 0.01
solver.horizon = 0.1
"#;
    let c = RunConfig::from_toml(text).unwrap();
    let tr = run(&c);
    assert!(budget(&tr) < 1e-12);
    assert!(entropy_production(&tr.records).worst_relative_defect >= -1e-8);
}

#[test]
fn quartic_interaction_run() {
    let mut c = coupled(12, 0.1);
    c.kernel.interaction = "quartic".into();
    c.kernel.a4 = 0.5;
    let tr = run(&c);
    assert!(budget(&tr) < 1e-12);
}

#[test]
fn conduction_only_obeys_the_maximum_principle() {
    let mut c = default_1d(16);
    c.thermo.contrast = 0.0;
    c.init.theta = cosine(1.0, 0.8);
    c.solver.dt = 0.01;
    c.solver.horizon = 0.5;
    let b = c.build().unwrap();
    let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
    let sup0 = b.init.theta.iter().cloned().fold(0.0, f64::max);
    assert!(tr.records.iter().all(|r| r.max_theta <= sup0));
    let env = upper_envelope(&tr.records, 1.0, 0.0, 1e-2).unwrap();
    assert!(env.uniform && env.empirical_sup <= env.v0);
    assert!(env.envelope(0.0) == env.v0 && env.slope.is_infinite());
    // Truncated terms are never used here, so any ϱ gives the same run.
    let rep = truncation_inactivity(&b.system, &b.init, &SolverConfig { rho: 1.0, ..b.solver }).unwrap();
    assert!(rep.agree && rep.max_relative_difference == 0.0);
}

#[test]
fn regularization_envelope_slope() {
    let mut c = coupled(8, 0.1);
    c.solver.n_reg = 4.0;
    let b = c.build().unwrap();
    let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
    let env = upper_envelope(&tr.records, 1.0, 4.0, 1e-2).unwrap();
    assert!((env.slope - 4.0 * env.m_tilde).abs() <= 1e-15 * env.slope);
    assert!((env.envelope(0.5) - env.v0 - 2.0 * env.m_tilde).abs() < 1e-12);
}

#[test]
fn single_cell_matches_the_exact_solution_to_first_order() {
    let text = include_str!("../../../configs/single_cell.toml");
    let mut errors = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let mut c = RunConfig::from_toml(text).unwrap();
        c.solver.dt = dt;
        let tr = run(&c);
        let s = tr.final_state();
        errors.push((s.theta[0] - single_cell_robin_exact(2.0, 1.0, 2.0, s.t).unwrap()).abs());
    }
    for w in errors.windows(2) {
        let order = (w[0] / w[1]).log2();
        assert!((0.8..=1.2).contains(&order), "{errors:?}");
    }
}

#[test]
fn records_are_reproduced_from_snapshots() {
    let b = coupled(16, 0.2).build().unwrap();
    let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
    let (again, coarse) = records_from_snapshots(&b.system, &tr.snapshots, &b.solver).unwrap();
    assert!(!coarse);
    assert_eq!(again, tr.records);
    let thin: Vec<_> = tr.snapshots.iter().step_by(5).cloned().collect();
    assert!(records_from_snapshots(&b.system, &thin, &b.solver).unwrap().1);
}

#[test]
fn cadence_keeps_first_and_last() {
    let mut c = coupled(8, 0.1);
    c.output.cadence = 3;
    let tr = run(&c);
    let times: Vec<f64> = tr.snapshots.iter().map(|s| s.t).collect();
    assert_eq!(times.len(), 5);
    assert_eq!(times[0], 0.0);
    assert!((times[4] - 0.1).abs() < 1e-15);
    assert_eq!(tr.records.len(), 11);
}

#[test]
fn mode_errors() {
    let b = coupled(8, 0.05).build().unwrap();
    let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
    assert!(matches!(lower_bound_check(&b.system.model, &tr.records, b.solver.rho), Err(Error::Mode(_))));
    let zero = vec![0.0; 8];
    assert!(matches!(continuous_dependence(&b.system, &b.init, &b.solver, &zero, &zero), Err(Error::Mode(_))));
    assert!(matches!(regularity_indicator(&b.system, &tr.snapshots), Err(Error::Mode(_))));

    let mut c = coupled(8, 0.05);
    c.boundary.gamma = 1.0;
    let b = c.build().unwrap();
    assert!(matches!(generic_check(&b.system, &b.init, b.solver.rho), Err(Error::Mode(_))));
    c.thermo.uniqueness = true;
    let b = c.build().unwrap();
    assert!(matches!(continuous_dependence(&b.system, &b.init, &b.solver, &zero, &zero), Err(Error::Mode(_))));
}

#[test]
fn inadmissible_initial_data() {
    let mut c = coupled(8, 0.05);
    c.init.chi = vec![cosine(0.5, 0.9)];
    assert!(c.build().unwrap_err().is_validation());
    let mut c = coupled(8, 0.05);
    c.init.theta = cosine(0.2, 0.5);
    assert!(matches!(c.build(), Err(Error::Precondition(_))));
}

#[test]
fn regularity_indicator_is_flat_at_equilibrium() {
    let mut c = default_1d(8);
    c.thermo.contrast = 0.0;
    c.thermo.uniqueness = true;
    c.solver.dt = 0.05;
    c.solver.horizon = 0.2;
    let b = c.build().unwrap();
    let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
    let pts = regularity_indicator(&b.system, &tr.snapshots).unwrap();
    assert!(pts.iter().all(|p| p.theta_rate == 0.0 && p.kirchhoff_seminorm == 0.0));
}

#[test]
fn regularity_indicator_stays_bounded_under_refinement() {
    let mut maxima = Vec::new();
    for dt in [0.02, 0.01, 0.005] {
        let mut c = coupled(16, 0.2);
        c.thermo.uniqueness = true;
        c.solver.dt = dt;
        let b = c.build().unwrap();
        let tr = solver::run(&b.system, b.init.clone(), &b.solver).unwrap();
        let pts = regularity_indicator(&b.system, &tr.snapshots).unwrap();
        let rate: f64 = pts.iter().skip(1).map(|p| dt * p.theta_rate).sum();
        let semi = pts.iter().map(|p| p.kirchhoff_seminorm).fold(0.0, f64::max);
        maxima.push((rate, semi));
    }
    for w in maxima.windows(2) {
        assert!((w[1].0 / w[0].0 - 1.0).abs() < 0.1, "{maxima:?}");
        assert!((w[1].1 / w[0].1 - 1.0).abs() < 0.1, "{maxima:?}");
    }
}
