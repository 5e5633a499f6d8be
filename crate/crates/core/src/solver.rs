//! Semi-implicit time stepper: a per-cell proximal step for the phase
//! followed by a backward-Euler quasilinear energy step with lagged
//! conductivity.

use rayon::prelude::*;

use crate::convex::ConvexPotential;
use crate::diagnostics::{self, StepRecord};
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, DiffusionOperator, Grid};
use crate::nonlocal::NonlocalOperator;
use crate::thermo::{ModelBounds, ThermoModel};

/// Maximum number of successive step halvings before a failure is final.
pub const MAX_HALVINGS: usize = 5;

/// Everything that stays fixed over a run.
#[derive(Debug, Clone)]
pub struct System {
    pub grid: Grid,
    pub model: ThermoModel,
    pub potential: ConvexPotential,
    pub kernel: NonlocalOperator,
    pub boundary: BoundaryData,
}

impl System {
    pub fn new(
        grid: Grid,
        model: ThermoModel,
        potential: ConvexPotential,
        kernel: NonlocalOperator,
        boundary: BoundaryData,
    ) -> Result<Self> {
        potential.validate()?;
        let d = potential.dim();
        if model.components() != d || kernel.components() != d {
            return Err(Error::Config(format!(
                "phase dimension mismatch: model {}, potential {d}, kernel {}",
                model.components(),
                kernel.components()
            )));
        }
        if kernel.len() != grid.len() {
            return Err(Error::Config("kernel size does not match the grid".into()));
        }
        if kernel.symmetry_residual() != 0.0 {
            return Err(Error::contract(crate::Contract::KernelSymmetry, format!(
                "max |K_ij - K_ji| = {}",
                kernel.symmetry_residual()
            )));
        }
        Ok(System { grid, model, potential, kernel, boundary })
    }

    pub fn components(&self) -> usize {
        self.potential.dim()
    }

    pub fn cells(&self) -> usize {
        self.grid.len()
    }

    /// Bound on `|χ_i - χ_j|` used for `C_b`: the diameter of the domain
    /// of `φ`, or twice the largest initial gauge level for unbounded gauge domains.
    pub fn interaction_range(&self, chi0: &[f64]) -> f64 {
        let d = self.components();
        match &self.potential {
            ConvexPotential::IndicatorBox { lo, hi } => lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2)).sum::<f64>().sqrt(),
            ConvexPotential::IndicatorBall { radius, .. } => 2.0 * radius,
            ConvexPotential::IndicatorSimplex { .. } => std::f64::consts::SQRT_2,
            ConvexPotential::Gauge { body, profile } => {
                let level = if profile.f0().is_finite() {
                    profile.f0()
                } else {
                    chi0.chunks(d).map(|c| body.gauge(c)).fold(0.0, f64::max) + 1.0
                };
                2.0 * body.outer_radius() * level
            }
        }
    }

    /// `C_{ℓ,ϱ}` for this system.
    pub fn c_ell(&self, rho: f64, chi0: &[f64]) -> f64 {
        let c_b = self.kernel.c_b(self.interaction_range(chi0));
        bound_c_ell(self.model.bounds(), c_b, rho)
    }

    /// `C0`: largest minimal-norm subgradient of `φ` over the initial phase.
    pub fn c_zero(&self, chi0: &[f64]) -> Result<f64> {
        let d = self.components();
        let mut c0: f64 = 0.0;
        for (i, c) in chi0.chunks(d).enumerate() {
            let sel = self
                .potential
                .subdiff_select(c)
                .map_err(|_| Error::Precondition(format!("initial phase {c:?} at cell {i} outside the domain")))?;
            c0 = c0.max(sel.min_norm_value());
        }
        Ok(c0)
    }
}

/// `C_σ + (C_λ + C_b)/β + c1 c̄ + c1^2 + c1 c̄ log ϱ`.
pub fn bound_c_ell(b: &ModelBounds, c_b: f64, rho: f64) -> f64 {
    b.c_sigma + (b.c_lambda + c_b) / b.beta + b.c1 * b.c_bar + b.c1 * b.c1 + b.c1 * b.c_bar * rho.ln()
}

/// Temperature, phase (cell-major) and selection at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub t: f64,
    pub theta: Vec<f64>,
    pub chi: Vec<f64>,
    pub xi: Vec<f64>,
}

impl State {
    pub fn new(theta: Vec<f64>, chi: Vec<f64>) -> Self {
        let xi = vec![0.0; chi.len()];
        State { t: 0.0, theta, chi, xi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LagMode {
    PreviousStep,
    /// Mean temperature over the previous block of `J` steps, phase at its last node.
    IntervalAverage(usize),
}

/// Lagged conductivity arguments `(θ̄, χ̄)`.
#[derive(Debug, Clone)]
pub struct LagTracker {
    mode: LagMode,
    theta_bar: Vec<f64>,
    chi_bar: Vec<f64>,
    sum: Vec<f64>,
    count: usize,
}

impl LagTracker {
    pub fn new(mode: LagMode, initial: &State) -> Self {
        LagTracker {
            mode,
            theta_bar: initial.theta.clone(),
            chi_bar: initial.chi.clone(),
            sum: vec![0.0; initial.theta.len()],
            count: 0,
        }
    }

    pub fn fields(&self) -> (&[f64], &[f64]) {
        (&self.theta_bar, &self.chi_bar)
    }

    /// Registers the state reached by a completed step.
    pub fn push(&mut self, s: &State) {
        match self.mode {
            LagMode::PreviousStep => {
                self.theta_bar.copy_from_slice(&s.theta);
                self.chi_bar.copy_from_slice(&s.chi);
            }
            LagMode::IntervalAverage(j) => {
                for (a, v) in self.sum.iter_mut().zip(&s.theta) {
                    *a += v;
                }
                self.count += 1;
                if self.count == j {
                    for (b, a) in self.theta_bar.iter_mut().zip(&self.sum) {
                        *b = a / j as f64;
                    }
                    self.chi_bar.copy_from_slice(&s.chi);
                    self.sum.iter_mut().for_each(|v| *v = 0.0);
                    self.count = 0;
                }
            }
        }
    }
}

/// Lagged fields after the completed steps `history`, starting from `initial`.
pub fn lagged_fields(initial: &State, history: &[State], mode: LagMode) -> (Vec<f64>, Vec<f64>) {
    let mut lag = LagTracker::new(mode, initial);
    for s in history {
        lag.push(s);
    }
    let (t, c) = lag.fields();
    (t.to_vec(), c.to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Index `n` of the `θ/n` regularization; 0 disables it.
    pub n_reg: f64,
    pub rho: f64,
    pub lag: LagMode,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Snapshot every `cadence` steps (the final state is always kept).
    pub cadence: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            dt: 1e-3,
            horizon: 1.0,
            n_reg: 0.0,
            rho: 1e6,
            lag: LagMode::PreviousStep,
            newton_tol: 1e-13,
            newton_max_iter: 50,
            cadence: 1,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("time step must be positive, got {}", self.dt)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Config(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.n_reg >= 0.0) {
            return Err(Error::Config(format!("regularization index must be >= 0, got {}", self.n_reg)));
        }
        if !(self.rho >= 1.0) {
            return Err(Error::Config(format!("truncation must be >= 1, got {}", self.rho)));
        }
        if let LagMode::IntervalAverage(0) = self.lag {
            return Err(Error::Config("interval average needs at least one step per interval".into()));
        }
        if !(self.newton_tol > 0.0) || self.newton_max_iter == 0 {
            return Err(Error::Config("Newton tolerance and iteration cap must be positive".into()));
        }
        if self.cadence == 0 {
            return Err(Error::Config("output cadence must be >= 1".into()));
        }
        Ok(())
    }

    pub fn epsilon(&self) -> f64 {
        if self.n_reg > 0.0 {
            1.0 / self.n_reg
        } else {
            0.0
        }
    }

    pub fn steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

/// `(α, g)` of the phase inclusion `α χ' + ∂φ(χ) ∋ g`.
pub fn rhs_ell(model: &ThermoModel, theta: f64, chi: &[f64], b_val: &[f64], rho: f64) -> Result<(f64, Vec<f64>)> {
    let m = model.inner();
    let d = chi.len();
    let beta = m.beta();
    let alpha = model.truncated_mobility(theta, rho) / (beta + theta);
    let (_, e_chi) = model.energy_density(theta, chi)?;
    let s_chi = model.truncated_entropy_gradient(theta, chi, rho)?;
    let mut sig = vec![0.0; d];
    let mut lam = vec![0.0; d];
    m.sigma_grad(chi, &mut sig);
    m.lambda_grad(chi, &mut lam);
    let g = (0..d)
        .map(|c| -(theta * sig[c] + lam[c] + b_val[c] + e_chi[c] - theta * s_chi[c]) / (beta + theta))
        .collect();
    Ok((alpha, g))
}

/// Phase step: per cell `χ' = prox(χ + Δt g/α, α/Δt)` and `ξ' = g - α (χ' - χ)/Δt`.
pub fn step_chi(sys: &System, state: &State, b_prev: &[f64], dt: f64, rho: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = sys.components();
    let cells: Vec<(Vec<f64>, Vec<f64>)> = (0..sys.cells())
        .into_par_iter()
        .map(|i| {
            let chi = &state.chi[i * d..(i + 1) * d];
            let (alpha, g) = rhs_ell(&sys.model, state.theta[i], chi, &b_prev[i * d..(i + 1) * d], rho)?;
            let z: Vec<f64> = chi.iter().zip(&g).map(|(c, gc)| c + dt * gc / alpha).collect();
            let next = sys.potential.prox(&z, alpha / dt)?;
            let xi = (0..d).map(|c| g[c] - alpha * (next[c] - chi[c]) / dt).collect();
            Ok((next, xi))
        })
        .collect::<Result<_>>()?;
    let mut chi_new = Vec::with_capacity(d * sys.cells());
    let mut xi_new = Vec::with_capacity(d * sys.cells());
    for (c, x) in cells {
        chi_new.extend(c);
        xi_new.extend(x);
    }
    Ok((chi_new, xi_new))
}

/// Selection `g - α (χ' - χ)/Δt` implied by a step from `prev` to `chi_new`,
/// with the same arithmetic as `step_chi`.
pub fn recover_selection(sys: &System, prev: &State, chi_new: &[f64], dt: f64, rho: f64) -> Result<Vec<f64>> {
    let d = sys.components();
    let b_prev = sys.kernel.b_operator(&prev.chi)?;
    let cells: Vec<Vec<f64>> = (0..sys.cells())
        .into_par_iter()
        .map(|i| {
            let chi = &prev.chi[i * d..(i + 1) * d];
            let (alpha, g) = rhs_ell(&sys.model, prev.theta[i], chi, &b_prev[i * d..(i + 1) * d], rho)?;
            Ok((0..d).map(|c| g[c] - alpha * (chi_new[i * d + c] - chi[c]) / dt).collect())
        })
        .collect::<Result<_>>()?;
    Ok(cells.concat())
}

/// Minimal-norm subgradient of `φ` in every cell.
pub fn initial_selection(sys: &System, chi: &[f64]) -> Result<Vec<f64>> {
    let d = sys.components();
    let mut xi = vec![0.0; chi.len()];
    for i in 0..sys.cells() {
        let sel = sys.potential.subdiff_select(&chi[i * d..(i + 1) * d])?;
        xi[i * d..(i + 1) * d].copy_from_slice(&sel.min_norm);
    }
    Ok(xi)
}

/// Conduction operator built from the lagged fields.
pub fn lagged_operator(sys: &System, theta_bar: &[f64], chi_bar: &[f64]) -> Result<DiffusionOperator> {
    let d = sys.components();
    let m = sys.model.inner();
    let cell_k: Vec<f64> = (0..sys.cells()).map(|i| m.conductivity(theta_bar[i], &chi_bar[i * d..(i + 1) * d])).collect();
    let face_k = DiffusionOperator::face_conductivities(&sys.grid, &cell_k);
    DiffusionOperator::assemble(&sys.grid, &face_k, &sys.boundary, m.conductivity_bounds())
}

/// Per-cell energy source `(λ'(χ') + b) · (χ' - χ) + β (φ(χ') - φ(χ))` for one step.
pub fn energy_source(sys: &System, chi: &[f64], chi_new: &[f64], b_prev: &[f64]) -> Vec<f64> {
    let d = sys.components();
    let m = sys.model.inner();
    let beta = m.beta();
    let mut lam = vec![0.0; d];
    (0..sys.cells())
        .map(|i| {
            let (a, b) = (&chi[i * d..(i + 1) * d], &chi_new[i * d..(i + 1) * d]);
            m.lambda_grad(b, &mut lam);
            let mut s = 0.0;
            for c in 0..d {
                s += (lam[c] + b_prev[i * d + c]) * (b[c] - a[c]);
            }
            let dphi = sys.potential.eval(b) - sys.potential.eval(a);
            s + if dphi == 0.0 { 0.0 } else { beta * dphi }
        })
        .collect()
}

/// Energy step: solves, per cell,
/// `V [ε(θ' - θ) + e(θ', χ') - e(θ, χ) + src] + Δt [(Lθ')_i + robin_i] = 0`
/// by damped Newton with Jacobian `diag(V (ε + c_V)) + Δt L`.
#[allow(clippy::too_many_arguments)]
pub fn step_theta(
    sys: &System,
    op: &DiffusionOperator,
    state: &State,
    chi_new: &[f64],
    src: &[f64],
    dt: f64,
    t_new: f64,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    let d = sys.components();
    let n = sys.cells();
    let eps = config.epsilon();
    let vol = sys.grid.volumes();
    let model = &sys.model;
    let e_old: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| model.energy_extended(state.theta[i], &state.chi[i * d..(i + 1) * d]))
        .collect::<Result<_>>()?;
    let tg = sys.boundary.theta_at(t_new);
    let robin_src = op.robin_source(&tg);
    let matrix = op.matrix();
    let scale = (0..n).map(|i| vol[i] * (e_old[i].abs() + src[i].abs() + eps * state.theta[i].abs())).fold(0.0, f64::max);
    let tol = config.newton_tol * scale.max(f64::MIN_POSITIVE);

    let residual = |th: &[f64]| -> Result<Vec<f64>> {
        let e_new: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|i| model.energy_extended(th[i], &chi_new[i * d..(i + 1) * d]))
            .collect::<Result<_>>()?;
        let lt = matrix.matvec(th);
        Ok((0..n)
            .map(|i| {
                vol[i] * (eps * (th[i] - state.theta[i]) + e_new[i] - e_old[i] + src[i]) + dt * (lt[i] - robin_src[i])
            })
            .collect())
    };
    let norm2 = |r: &[f64]| r.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_inf = |r: &[f64]| r.iter().fold(0.0f64, |a, v| a.max(v.abs()));

    let mut th = state.theta.clone();
    let mut r = residual(&th)?;
    let mut iter = 0;
    while norm_inf(&r) > tol {
        if iter == config.newton_max_iter {
            return Err(Error::numerical("energy step", format!("no convergence in {iter} Newton iterations"), norm_inf(&r)));
        }
        iter += 1;
        let mut jac = matrix.clone();
        for i in 0..n {
            let cv = model.c_v(th[i].abs(), &chi_new[i * d..(i + 1) * d]);
            jac.add(i, i, vol[i] * (eps + cv) / dt);
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v / dt).collect();
        let delta = jac.cholesky()?.solve(&rhs);
        let r0 = norm2(&r);
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = th.iter().zip(&delta).map(|(a, b)| a + lambda * b).collect();
            let rt = residual(&trial)?;
            if norm2(&rt) <= (1.0 - 1e-4 * lambda) * r0 || norm_inf(&rt) <= tol {
                th = trial;
                r = rt;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        if !accepted {
            let step = norm_inf(&delta);
            let size = norm_inf(&th);
            if step <= 8.0 * f64::EPSILON * size && norm_inf(&r) <= 1e3 * tol {
                break;
            }
            return Err(Error::numerical("energy step", "line search stalled", norm_inf(&r)));
        }
    }
    if let Some((i, v)) = th.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::Positivity(format!("temperature {v} at cell {i}, t = {t_new}")));
    }
    Ok(th)
}

/// Work products of one step, kept for the records.
#[derive(Debug, Clone)]
pub struct StepWork {
    pub b_prev: Vec<f64>,
    pub src: Vec<f64>,
    pub op: DiffusionOperator,
}

/// One step `χ` then `θ` with fixed lagged fields.
pub fn step(sys: &System, state: &State, lag: (&[f64], &[f64]), dt: f64, config: &SolverConfig) -> Result<(State, StepWork)> {
    let b_prev = sys.kernel.b_operator(&state.chi)?;
    let (chi_new, xi_new) = step_chi(sys, state, &b_prev, dt, config.rho)?;
    let src = energy_source(sys, &state.chi, &chi_new, &b_prev);
    let op = lagged_operator(sys, lag.0, lag.1)?;
    let t_new = state.t + dt;
    let theta_new = step_theta(sys, &op, state, &chi_new, &src, dt, t_new, config)?;
    Ok((State { t: t_new, theta: theta_new, chi: chi_new, xi: xi_new }, StepWork { b_prev, src, op }))
}

fn retryable(e: &Error) -> bool {
    matches!(e, Error::Numerical { .. } | Error::Positivity(_))
}

/// Step with rejection: on failure the interval is split into halves, at most `MAX_HALVINGS` deep.
fn advance(sys: &System, state: &State, lag: (&[f64], &[f64]), dt: f64, config: &SolverConfig, depth: usize, rejections: &mut usize) -> Result<State> {
    match step(sys, state, lag, dt, config) {
        Ok((s, _)) => Ok(s),
        Err(e) if retryable(&e) && depth < MAX_HALVINGS => {
            *rejections += 1;
            let mid = advance(sys, state, lag, 0.5 * dt, config, depth + 1, rejections)?;
            advance(sys, &mid, lag, 0.5 * dt, config, depth + 1, rejections)
        }
        Err(e) => Err(e),
    }
}

/// Ordered snapshots plus one record per step (entry 0 describes the initial state).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<State>,
    pub records: Vec<StepRecord>,
    pub rejections: usize,
    pub c_ell: f64,
    pub c_zero: f64,
    pub d_bound: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &State {
        self.snapshots.last().expect("trajectory has the initial snapshot")
    }
}

/// Checks positivity of `θ0` and admissibility of `χ0`.
pub fn check_initial(sys: &System, init: &State) -> Result<()> {
    let n = sys.cells();
    if init.theta.len() != n || init.chi.len() != n * sys.components() {
        return Err(Error::Config(format!(
            "initial data must have {n} temperatures and {} phase entries",
            n * sys.components()
        )));
    }
    if let Some((i, v)) = init.theta.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Precondition(format!("initial temperature {v} at cell {i} is not positive")));
    }
    sys.c_zero(&init.chi).map(|_| ())
}

/// Runs `⌈T/Δt⌉` steps from `init`.
pub fn run(sys: &System, init: State, config: &SolverConfig) -> Result<Trajectory> {
    config.validate()?;
    sys.boundary.validate(&sys.grid, config.horizon)?;
    check_initial(sys, &init)?;
    let c_ell = sys.c_ell(config.rho, &init.chi);
    let c_zero = sys.c_zero(&init.chi)?;
    let d_bound = sys.potential.d_bound();
    let select_bound = d_bound * c_ell.max(c_zero);
    let steps = config.steps();
    let dt = config.horizon / steps as f64;

    let mut state = init;
    state.t = 0.0;
    state.xi = initial_selection(sys, &state.chi)?;
    let mut lag = LagTracker::new(config.lag, &state);
    let mut records = vec![diagnostics::initial_record(sys, &state, config.rho, select_bound)?];
    let mut snapshots = vec![state.clone()];
    let mut rejections = 0;
    for k in 1..=steps {
        let (tb, cb) = lag.fields();
        let (tb, cb) = (tb.to_vec(), cb.to_vec());
        let t_new = k as f64 * dt;
        let mut next = advance(sys, &state, (&tb, &cb), t_new - state.t, config, 0, &mut rejections)?;
        next.t = t_new;
        if next.xi.len() != next.chi.len() || rejections > 0 {
            next.xi = recover_selection(sys, &state, &next.chi, t_new - state.t, config.rho)?;
        }
        let op = lagged_operator(sys, &tb, &cb)?;
        records.push(diagnostics::step_record(sys, &op, &state, &next, config.rho, select_bound)?);
        lag.push(&next);
        if k % config.cadence == 0 || k == steps {
            snapshots.push(next.clone());
        }
        state = next;
    }
    Ok(Trajectory { snapshots, records, rejections, c_ell, c_zero, d_bound })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn c_ell_arithmetic() {
        let b = ModelBounds {
            c_bar: 1.0,
            c_low: 1.0,
            c1: 1.0,
            c_sigma: 0.0,
            c_lambda: 0.0,
            k0: 1.0,
            k1: 1.0,
            mu0: 1.0,
            l_mu: 0.0,
            beta: 1.0,
        };
        assert!((bound_c_ell(&b, 0.0, std::f64::consts::E) - 3.0).abs() < 1e-15);
        assert_eq!(bound_c_ell(&b, 0.0, 1.0), 2.0);
    }

    #[test]
    fn interval_average_lag() {
        let s0 = State::new(vec![5.0], vec![0.1]);
        let mut s1 = State::new(vec![1.0], vec![0.2]);
        s1.t = 1.0;
        let mut s2 = State::new(vec![3.0], vec![0.3]);
        s2.t = 2.0;
        let (t, c) = lagged_fields(&s0, &[s1.clone()], LagMode::IntervalAverage(2));
        assert_eq!((t[0], c[0]), (5.0, 0.1));
        let (t, c) = lagged_fields(&s0, &[s1.clone(), s2.clone()], LagMode::IntervalAverage(2));
        assert_eq!((t[0], c[0]), (2.0, 0.3));
        let (t, c) = lagged_fields(&s0, &[s1, s2], LagMode::PreviousStep);
        assert_eq!((t[0], c[0]), (3.0, 0.3));
    }
}
