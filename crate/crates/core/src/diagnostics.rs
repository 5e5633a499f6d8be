//! Machine checks on trajectories: budgets, temperature bounds,
//! truncation calibration, data dependence and GENERIC identities.

use rayon::prelude::*;

use crate::error::{Contract, Error, Result};
use crate::grid::DiffusionOperator;
use crate::solver::{self, LagMode, LagTracker, SolverConfig, State, System, Trajectory};
use crate::thermo::{generic_coefficients, GenericCoefficients, ThermoModel};

/// Per-step scalars. The first eight fields are the CSV columns.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepRecord {
    pub t: f64,
    pub total_energy: f64,
    pub total_entropy: f64,
    pub min_theta: f64,
    pub max_theta: f64,
    /// `min_i θ'_i ΔS_i / Δt + (div q)_i`.
    pub entropy_residual_min: f64,
    /// Round-off residual of the pairing identity at `(χ, Δχ/Δt)`.
    pub pairing_residual: f64,
    /// `D max(C_ℓ, C0) - max_i |ξ_i|`.
    pub selection_margin: f64,
    pub dt: f64,
    /// `Δt Σ γ |face| (θ' - θ_Γ)`, heat leaving through the boundary.
    pub boundary_heat: f64,
    /// `ΔΣ wB - Σ w b[χ]·Δχ`.
    pub chain_defect: f64,
    /// `ΔΣ wE + boundary_heat - chain_defect`: the step's conservation defect.
    pub energy_residual: f64,
    pub entropy_change: f64,
    /// `ΔΣwS + Δt Σ robin_i/θ'_i - Δt P` with the discrete production
    /// `P = Σ_faces T (Δθ)^2/(θ_a θ_b) + Σ w μ |Δχ/Δt|^2 / θ'`.
    pub entropy_balance_residual: f64,
    /// `max |σ' - s_χ^ϱ + ξ|` over cells.
    pub r_max: f64,
    /// `max_i |src_i| / Δt`.
    pub source_max: f64,
    /// `max` over faces of `q · ∇θ` (nonpositive by construction).
    pub flux_work_max: f64,
    /// Largest `|ξ_i|`.
    pub selection_max: f64,
}

fn cell(v: &[f64], i: usize, d: usize) -> &[f64] {
    &v[i * d..(i + 1) * d]
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-cell `(E_i, S_i)` without the nonlocal part, plus `B_i`.
fn cell_densities(sys: &System, s: &State) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let d = sys.components();
    let b = sys.kernel.b_potential(&s.chi)?;
    let pairs: Vec<(f64, f64)> = (0..sys.cells())
        .into_par_iter()
        .map(|i| {
            let (_, e, en) = sys.model.densities(&sys.potential, s.theta[i], cell(&s.chi, i, d), b[i])?;
            Ok((e, en))
        })
        .collect::<Result<_>>()?;
    let (e, en) = pairs.into_iter().unzip();
    Ok((e, en, b))
}

pub fn total_energy(sys: &System, s: &State) -> Result<f64> {
    let (e, _, _) = cell_densities(sys, s)?;
    Ok(sys.grid.integrate(&e))
}

pub fn total_entropy(sys: &System, s: &State) -> Result<f64> {
    let (_, en, _) = cell_densities(sys, s)?;
    Ok(sys.grid.integrate(&en))
}

fn min_max(v: &[f64]) -> (f64, f64) {
    v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(*x), b.max(*x)))
}

/// Record of the initial state; residual columns are zero.
pub fn initial_record(sys: &System, s: &State, _rho: f64, select_bound: f64) -> Result<StepRecord> {
    let (e, en, _) = cell_densities(sys, s)?;
    let (lo, hi) = min_max(&s.theta);
    let d = sys.components();
    let sel = (0..sys.cells()).map(|i| norm(cell(&s.xi, i, d))).fold(0.0, f64::max);
    Ok(StepRecord {
        t: s.t,
        total_energy: sys.grid.integrate(&e),
        total_entropy: sys.grid.integrate(&en),
        min_theta: lo,
        max_theta: hi,
        selection_margin: select_bound - sel,
        selection_max: sel,
        ..Default::default()
    })
}

/// Record of the step `prev -> next` taken with conduction operator `op`.
pub fn step_record(sys: &System, op: &DiffusionOperator, prev: &State, next: &State, rho: f64, select_bound: f64) -> Result<StepRecord> {
    let d = sys.components();
    let n = sys.cells();
    let dt = next.t - prev.t;
    let w = sys.grid.volumes();
    let (e0, s0, b0) = cell_densities(sys, prev)?;
    let (e1, s1, b1) = cell_densities(sys, next)?;
    let (lo, hi) = min_max(&next.theta);

    let tg = sys.boundary.theta_at(next.t);
    let robin = op.robin_sum(&next.theta, &tg);
    let flux = op.flux_sum(&next.theta);
    let boundary_heat = dt * robin.iter().sum::<f64>();

    let mut res_min = f64::INFINITY;
    for i in 0..n {
        let div_q = (flux[i] + robin[i]) / w[i];
        res_min = res_min.min(next.theta[i] * (s1[i] - s0[i]) / dt + div_q);
    }

    let bop = sys.kernel.b_operator(&prev.chi)?;
    let dchi: Vec<f64> = next.chi.iter().zip(&prev.chi).map(|(a, b)| a - b).collect();
    let rate: Vec<f64> = dchi.iter().map(|v| v / dt).collect();
    let pairing = sys.kernel.pairing_identity(&prev.chi, &rate)?;
    let mut b_dot = 0.0;
    for i in 0..n {
        let mut acc = 0.0;
        for c in 0..d {
            acc += bop[i * d + c] * dchi[i * d + c];
        }
        b_dot += w[i] * acc;
    }
    let chain_defect = (sys.grid.integrate(&b1) - sys.grid.integrate(&b0)) - b_dot;
    let de = sys.grid.integrate(&e1) - sys.grid.integrate(&e0);

    let src = solver::energy_source(sys, &prev.chi, &next.chi, &bop);
    let source_max = src.iter().fold(0.0f64, |a, v| a.max(v.abs())) / dt;

    let m = sys.model.inner();
    let mut r_max: f64 = 0.0;
    let mut sel: f64 = 0.0;
    let mut sig = vec![0.0; d];
    for i in 0..n {
        let xi = cell(&next.xi, i, d);
        sel = sel.max(norm(xi));
        for (th, ch) in [(prev.theta[i], cell(&prev.chi, i, d)), (next.theta[i], cell(&next.chi, i, d))] {
            m.sigma_grad(ch, &mut sig);
            let sx = sys.model.truncated_entropy_gradient(th, ch, rho)?;
            let r: Vec<f64> = (0..d).map(|c| sig[c] - sx[c] + xi[c]).collect();
            r_max = r_max.max(norm(&r));
        }
    }
    let mut production = 0.0;
    for &(a, b, t) in op.faces() {
        production += t * (next.theta[a] - next.theta[b]).powi(2) / (next.theta[a] * next.theta[b]);
    }
    let mut outflow = 0.0;
    for i in 0..n {
        let r2: f64 = (0..d).map(|c| (rate[i * d + c]).powi(2)).sum();
        production += w[i] * sys.model.truncated_mobility(next.theta[i], rho) * r2 / next.theta[i];
        outflow += robin[i] / next.theta[i];
    }
    let entropy_change = sys.grid.integrate(&s1) - sys.grid.integrate(&s0);
    let flux_work_max = op
        .faces()
        .iter()
        .map(|&(a, b, t)| -t * (next.theta[a] - next.theta[b]).powi(2))
        .fold(f64::NEG_INFINITY, f64::max);

    Ok(StepRecord {
        t: next.t,
        total_energy: sys.grid.integrate(&e1),
        total_entropy: sys.grid.integrate(&s1),
        min_theta: lo,
        max_theta: hi,
        entropy_residual_min: res_min,
        pairing_residual: pairing.residual,
        selection_margin: select_bound - sel,
        dt,
        boundary_heat,
        chain_defect,
        energy_residual: de + boundary_heat - chain_defect,
        entropy_change,
        entropy_balance_residual: entropy_change + dt * outflow - dt * production,
        r_max,
        source_max,
        flux_work_max: if flux_work_max.is_finite() { flux_work_max } else { 0.0 },
        selection_max: sel,
    })
}

/// Recomputes the records from stored snapshots, replaying the lag.
/// Exact when the snapshots have cadence 1 and no step was split.
pub fn records_from_snapshots(sys: &System, snaps: &[State], config: &SolverConfig) -> Result<(Vec<StepRecord>, bool)> {
    if snaps.is_empty() {
        return Err(Error::Usage("no snapshots".into()));
    }
    let c_ell = sys.c_ell(config.rho, &snaps[0].chi);
    let c0 = sys.c_zero(&snaps[0].chi)?;
    let bound = sys.potential.d_bound() * c_ell.max(c0);
    let mut first = snaps[0].clone();
    first.xi = solver::initial_selection(sys, &first.chi)?;
    let mut lag = LagTracker::new(config.lag, &first);
    let mut out = vec![initial_record(sys, &first, config.rho, bound)?];
    let expected = config.horizon / config.steps() as f64;
    let mut coarse = false;
    for pair in snaps.windows(2) {
        let (tb, cb) = lag.fields();
        let op = solver::lagged_operator(sys, tb, cb)?;
        if (pair[1].t - pair[0].t - expected).abs() > 1e-9 * expected {
            coarse = true;
        }
        let mut next = pair[1].clone();
        next.xi = solver::recover_selection(sys, &pair[0], &next.chi, next.t - pair[0].t, config.rho)?;
        out.push(step_record(sys, &op, &pair[0], &next, config.rho, bound)?);
        lag.push(&next);
    }
    Ok((out, coarse))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyReport {
    pub initial: f64,
    pub last: f64,
    /// `(E(T) - E(0)) / |E(0)|`.
    pub relative_drift: f64,
    /// Largest `|energy_residual|` relative to `|E(0)|`.
    pub max_budget_residual: f64,
    /// Total heat that left through the boundary.
    pub boundary_heat: f64,
}

pub fn energy_budget(records: &[StepRecord]) -> Result<EnergyReport> {
    let first = records.first().ok_or_else(|| Error::Usage("empty record list".into()))?;
    let last = records.last().unwrap();
    let scale = first.total_energy.abs().max(f64::MIN_POSITIVE);
    Ok(EnergyReport {
        initial: first.total_energy,
        last: last.total_energy,
        relative_drift: (last.total_energy - first.total_energy) / scale,
        max_budget_residual: records.iter().skip(1).map(|r| r.energy_residual.abs()).fold(0.0, f64::max) / scale,
        boundary_heat: records.iter().skip(1).map(|r| r.boundary_heat).sum(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyReport {
    /// `min_k min(0, ΔΣwS_k) / |ΣwS_k|`.
    pub worst_relative_defect: f64,
    /// `min_k min(0, ΔΣwS_k)`.
    pub worst_defect: f64,
    pub min_local_residual: f64,
    pub flux_sign_ok: bool,
    pub total_increase: f64,
    /// `Σ_k |entropy_balance_residual_k|`, first order in `Δt`.
    pub balance_residual: f64,
}

pub fn entropy_production(records: &[StepRecord]) -> EntropyReport {
    let mut rel: f64 = 0.0;
    let mut abs: f64 = 0.0;
    let mut local = f64::INFINITY;
    let mut flux_ok = true;
    let mut balance = 0.0;
    for r in records.iter().skip(1) {
        balance += r.entropy_balance_residual.abs();
        let def = r.entropy_change.min(0.0);
        abs = abs.min(def);
        rel = rel.min(def / r.total_entropy.abs().max(f64::MIN_POSITIVE));
        local = local.min(r.entropy_residual_min);
        flux_ok &= r.flux_work_max <= 0.0;
    }
    let total = match (records.first(), records.last()) {
        (Some(a), Some(b)) => b.total_entropy - a.total_entropy,
        _ => 0.0,
    };
    EntropyReport {
        worst_relative_defect: rel,
        worst_defect: abs,
        min_local_residual: if local.is_finite() { local } else { 0.0 },
        flux_sign_ok: flux_ok,
        total_increase: total,
        balance_residual: balance,
    }
}

/// Comparison function `w` of `c̃(w) w' = -R^2 w^2 / (4 μ̃(w))`, `w(0) = w0`,
/// by classical RK4 between consecutive `times` with substeps of at most `max_h`.
pub fn lower_bound_ode<C, M>(c_tilde: C, mu: M, r: f64, w0: f64, times: &[f64], max_h: f64) -> Result<Vec<f64>>
where
    C: Fn(f64) -> f64,
    M: Fn(f64) -> f64,
{
    if !(w0 > 0.0) || !(max_h > 0.0) {
        return Err(Error::Precondition(format!("need w0 > 0 and step > 0, got {w0}, {max_h}")));
    }
    let f = |w: f64| {
        if w <= 0.0 {
            return f64::NAN;
        }
        -r * r * w * w / (4.0 * mu(w) * c_tilde(w))
    };
    let mut out = Vec::with_capacity(times.len());
    let mut w = w0;
    let mut t = times.first().copied().unwrap_or(0.0);
    for &target in times {
        let span = target - t;
        if span > 0.0 {
            let k = (span / max_h).ceil() as usize;
            let h = span / k as f64;
            for _ in 0..k {
                let k1 = f(w);
                let k2 = f(w + 0.5 * h * k1);
                let k3 = f(w + 0.5 * h * k2);
                let k4 = f(w + h * k3);
                w += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
                if !(w > 0.0) {
                    return Err(Error::contract(Contract::LowerBoundPositivity, format!("w reached {w} before t = {target}")));
                }
            }
        }
        t = target;
        out.push(w);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundReport {
    pub r: f64,
    pub w0: f64,
    pub w: Vec<f64>,
    /// `min_k (min θ_k - w_k (1 - 1e-6))`.
    pub margin: f64,
    pub holds: bool,
}

/// Checks `min θ(t) >= w(t)` with `R` measured along the records.
pub fn lower_bound_check(model: &ThermoModel, records: &[StepRecord], rho: f64) -> Result<LowerBoundReport> {
    if !model.uniqueness() {
        return Err(Error::Mode("the lower bound comparison needs uniqueness mode".into()));
    }
    let first = records.first().ok_or_else(|| Error::Usage("empty record list".into()))?;
    let r = records.iter().map(|x| x.r_max).fold(0.0, f64::max);
    let w0 = first.min_theta;
    let times: Vec<f64> = records.iter().map(|x| x.t).collect();
    let h = records.iter().skip(1).map(|x| x.dt).fold(f64::INFINITY, f64::min).min(1.0) / 4.0;
    let w = lower_bound_ode(|v| model.c_tilde(v), |v| model.truncated_mobility(v, rho), r, w0, &times, h)?;
    let margin = records.iter().zip(&w).map(|(x, wv)| x.min_theta - wv * (1.0 - 1e-6)).fold(f64::INFINITY, f64::min);
    Ok(LowerBoundReport { r, w0, w, margin, holds: margin >= 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpperEnvelope {
    pub v0: f64,
    pub m_tilde: f64,
    /// `M̃ n`; infinite when the regularization is off.
    pub slope: f64,
    pub empirical_sup: f64,
    /// Least-squares slope of `max θ` over the second half of the horizon.
    pub trend: f64,
    pub uniform: bool,
}

impl UpperEnvelope {
    pub fn envelope(&self, t: f64) -> f64 {
        if t == 0.0 {
            self.v0
        } else {
            self.v0 + self.slope * t
        }
    }
}

/// `v0 = max(sup θ0, sup θ_Γ)` and the crude envelope `v0 + M̃ n t`;
/// `uniform` when the late-time trend of `max θ` stays below `tol` relative per unit time.
pub fn upper_envelope(records: &[StepRecord], theta_gamma_sup: f64, n_reg: f64, tol: f64) -> Result<UpperEnvelope> {
    let first = records.first().ok_or_else(|| Error::Usage("empty record list".into()))?;
    let v0 = first.max_theta.max(theta_gamma_sup);
    let m_tilde = records.iter().map(|r| r.source_max).fold(0.0, f64::max);
    let slope = if n_reg > 0.0 { m_tilde * n_reg } else { f64::INFINITY };
    let sup = records.iter().map(|r| r.max_theta).fold(f64::NEG_INFINITY, f64::max);
    let t_end = records.last().unwrap().t;
    let late: Vec<&StepRecord> = records.iter().filter(|r| r.t >= 0.5 * t_end).collect();
    let trend = if late.len() >= 2 {
        let k = late.len() as f64;
        let mt = late.iter().map(|r| r.t).sum::<f64>() / k;
        let my = late.iter().map(|r| r.max_theta).sum::<f64>() / k;
        let sxy: f64 = late.iter().map(|r| (r.t - mt) * (r.max_theta - my)).sum();
        let sxx: f64 = late.iter().map(|r| (r.t - mt).powi(2)).sum();
        if sxx > 0.0 {
            sxy / sxx
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok(UpperEnvelope { v0, m_tilde, slope, empirical_sup: sup, trend, uniform: trend <= tol * sup.abs() })
}

/// `C* (1 + log ϱ)^(4 + 2N)`.
pub fn moser_bound(c_star: f64, n: usize, rho: f64) -> f64 {
    c_star * (1.0 + rho.ln()).powi(4 + 2 * n as i32)
}

/// Smallest `C*` with `sup θ <= C* (1 + log ϱ)^(4+2N)` over a run family `(sup θ, ϱ)`.
pub fn fit_c_star(family: &[(f64, f64)], n: usize) -> f64 {
    family.iter().map(|&(sup, rho)| sup / (1.0 + rho.ln()).powi(4 + 2 * n as i32)).fold(0.0, f64::max)
}

fn round_up_3(x: f64) -> f64 {
    let e = x.log10().floor() - 2.0;
    let unit = 10f64.powf(e);
    let r = (x / unit).ceil() * unit;
    // Guard against the representation of `unit` pushing the value below `x`.
    if r < x {
        r + unit
    } else {
        r
    }
}

/// Smallest `ϱ >= 1` (rounded up to 3 significant digits) with `C* (1 + log ϱ)^(4+2N) <= ϱ/2`.
pub fn calibrate_rho(c_star: f64, n: usize) -> Result<f64> {
    if !(c_star >= 0.0 && c_star.is_finite()) {
        return Err(Error::Precondition(format!("C* must be finite and >= 0, got {c_star}")));
    }
    if !(1..=3).contains(&n) {
        return Err(Error::Precondition(format!("space dimension must be 1, 2 or 3, got {n}")));
    }
    let g = |rho: f64| rho / 2.0 - moser_bound(c_star, n, rho);
    if g(1.0) >= 0.0 {
        return Ok(1.0);
    }
    let mut hi = 2.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if !hi.is_finite() {
            return Err(Error::numerical("rho calibration", "no bracket", c_star));
        }
    }
    // g decreases and then increases, so the sign change is unique.
    let mut lo = hi / 2.0;
    while hi - lo > 1e-9 * hi {
        let mid = (lo * hi).sqrt();
        if g(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut r = round_up_3(hi);
    while g(r) < 0.0 {
        r = round_up_3(r * (1.0 + 1e-3));
    }
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InactivityReport {
    pub max_relative_difference: f64,
    pub first_divergent_snapshot: Option<usize>,
    pub agree: bool,
    /// Largest temperature seen, to compare against `ϱ`.
    pub max_theta: f64,
}

/// Largest relative difference between two runs, snapshot by snapshot.
pub fn compare_trajectories(a: &Trajectory, b: &Trajectory, tol: f64) -> InactivityReport {
    let mut worst: f64 = 0.0;
    let mut first = None;
    let mut max_theta: f64 = 0.0;
    for (k, (x, y)) in a.snapshots.iter().zip(&b.snapshots).enumerate() {
        let sc_t = x.theta.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let sc_c = x.chi.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        max_theta = max_theta.max(sc_t);
        let dt = x.theta.iter().zip(&y.theta).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / sc_t;
        let dc = x.chi.iter().zip(&y.chi).fold(0.0f64, |m, (p, q)| m.max((p - q).abs())) / sc_c;
        let d = dt.max(dc);
        if d > tol && first.is_none() {
            first = Some(k);
        }
        worst = worst.max(d);
    }
    if a.snapshots.len() != b.snapshots.len() && first.is_none() {
        first = Some(a.snapshots.len().min(b.snapshots.len()));
    }
    InactivityReport { max_relative_difference: worst, first_divergent_snapshot: first, agree: first.is_none(), max_theta }
}

/// Reruns with `2ϱ` and compares to the run with `ϱ`.
pub fn truncation_inactivity(sys: &System, init: &State, config: &SolverConfig) -> Result<InactivityReport> {
    let a = solver::run(sys, init.clone(), config)?;
    let doubled = SolverConfig { rho: 2.0 * config.rho, ..*config };
    let b = solver::run(sys, init.clone(), &doubled)?;
    Ok(compare_trajectories(&a, &b, 1e-12))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceMeasure {
    pub lhs: f64,
    pub rhs: f64,
    /// `lhs / rhs`, or NaN when the perturbation vanishes.
    pub ratio: f64,
}

fn weighted_sq(w: &[f64], a: &[f64], b: &[f64], d: usize) -> f64 {
    w.iter().enumerate().map(|(i, wi)| wi * (0..d).map(|c| (a[i * d + c] - b[i * d + c]).powi(2)).sum::<f64>()).sum()
}

/// `lhs = ∫ Σw|θ̂|^2 dt + max_t Σw|χ̂|^2`, `rhs = Σw|θ̂0|^2 + Σw|χ̂0|^2` for two trajectories on the same time grid.
pub fn dependence_measure(sys: &System, a: &Trajectory, b: &Trajectory) -> Result<DependenceMeasure> {
    if a.snapshots.len() != b.snapshots.len() {
        return Err(Error::Usage("trajectories have different lengths".into()));
    }
    let w = sys.grid.volumes();
    let d = sys.components();
    let mut integral = 0.0;
    let mut chi_max: f64 = 0.0;
    for k in 0..a.snapshots.len() {
        let (x, y) = (&a.snapshots[k], &b.snapshots[k]);
        if k > 0 {
            let dt = x.t - a.snapshots[k - 1].t;
            integral += dt * weighted_sq(w, &x.theta, &y.theta, 1);
        }
        chi_max = chi_max.max(weighted_sq(w, &x.chi, &y.chi, d));
    }
    let (x0, y0) = (&a.snapshots[0], &b.snapshots[0]);
    let rhs = weighted_sq(w, &x0.theta, &y0.theta, 1) + weighted_sq(w, &x0.chi, &y0.chi, d);
    let lhs = integral + chi_max;
    Ok(DependenceMeasure { lhs, rhs, ratio: if rhs > 0.0 { lhs / rhs } else { f64::NAN } })
}

/// Base run against the run from `init + (δθ0, δχ0)`.
pub fn continuous_dependence(sys: &System, init: &State, config: &SolverConfig, dtheta0: &[f64], dchi0: &[f64]) -> Result<DependenceMeasure> {
    if !sys.model.uniqueness() {
        return Err(Error::Mode("continuous dependence needs uniqueness mode".into()));
    }
    if !sys.boundary.is_insulated() {
        return Err(Error::Mode("continuous dependence needs gamma = 0".into()));
    }
    let mut pert = init.clone();
    for (v, dv) in pert.theta.iter_mut().zip(dtheta0) {
        *v += dv;
    }
    for (v, dv) in pert.chi.iter_mut().zip(dchi0) {
        *v += dv;
    }
    let a = solver::run(sys, init.clone(), config)?;
    let b = solver::run(sys, pert, config)?;
    dependence_measure(sys, &a, &b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceStability {
    pub coarse: DependenceMeasure,
    pub fine: DependenceMeasure,
    /// `max/min` of the two ratios.
    pub spread: f64,
    pub stable: bool,
}

/// Two-scale protocol: perturbations `δ` and `δ/2` of the same shape.
pub fn dependence_stability(sys: &System, init: &State, config: &SolverConfig, dtheta0: &[f64], dchi0: &[f64], factor: f64) -> Result<DependenceStability> {
    let coarse = continuous_dependence(sys, init, config, dtheta0, dchi0)?;
    let half_t: Vec<f64> = dtheta0.iter().map(|v| 0.5 * v).collect();
    let half_c: Vec<f64> = dchi0.iter().map(|v| 0.5 * v).collect();
    let fine = continuous_dependence(sys, init, config, &half_t, &half_c)?;
    let spread = coarse.ratio.max(fine.ratio) / coarse.ratio.min(fine.ratio);
    Ok(DependenceStability { coarse, fine, spread, stable: spread.is_finite() && spread <= factor })
}

/// Maximal relative residuals of the GENERIC identities.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GenericResiduals {
    /// `|m12|^2 - m11 m22`.
    pub rank: f64,
    /// `m11 c_V + m12 · DχE`.
    pub first_row: f64,
    /// `m12 c_V + m22 DχE`.
    pub second_row: f64,
    /// Discrete `M0[c_V]` through `∇(c_V / c_V)`.
    pub operator_row: f64,
    pub min_diagonal: f64,
}

impl GenericResiduals {
    pub fn max(&self) -> f64 {
        self.rank.max(self.first_row).max(self.second_row).max(self.operator_row)
    }
}

/// Relative residuals of one coefficient triple.
pub fn generic_residuals(m: &GenericCoefficients, c_v: f64, dchi_e: &[f64]) -> GenericResiduals {
    let m12sq: f64 = m.m12.iter().map(|v| v * v).sum();
    let rank = (m12sq - m.m11 * m.m22).abs() / (m12sq + m.m11 * m.m22).max(f64::MIN_POSITIVE);
    let cross: f64 = m.m12.iter().zip(dchi_e).map(|(a, b)| a * b).sum();
    let first_row = (m.m11 * c_v + cross).abs() / ((m.m11 * c_v).abs() + cross.abs()).max(f64::MIN_POSITIVE);
    let mut second: f64 = 0.0;
    for (a, b) in m.m12.iter().zip(dchi_e) {
        let x = a * c_v;
        let y = m.m22 * b;
        second = second.max((x + y).abs() / (x.abs() + y.abs()).max(f64::MIN_POSITIVE));
    }
    GenericResiduals { rank, first_row, second_row: second, operator_row: 0.0, min_diagonal: m.m11.min(m.m22) }
}

/// Checks the GENERIC block on every cell of `state`, with `DχE = e_χ + λ' + b + β ξ`.
pub fn generic_check(sys: &System, state: &State, rho: f64) -> Result<GenericResiduals> {
    if !sys.boundary.is_insulated() {
        return Err(Error::Mode("the GENERIC block is stated for gamma = 0".into()));
    }
    let d = sys.components();
    let m = sys.model.inner();
    let b = sys.kernel.b_operator(&state.chi)?;
    let mut out = GenericResiduals { min_diagonal: f64::INFINITY, ..Default::default() };
    let mut lam = vec![0.0; d];
    let mut ratio = Vec::with_capacity(sys.cells());
    for i in 0..sys.cells() {
        let (th, ch) = (state.theta[i], cell(&state.chi, i, d));
        let (_, e_chi) = sys.model.energy_density(th, ch)?;
        m.lambda_grad(ch, &mut lam);
        let de: Vec<f64> = (0..d).map(|c| e_chi[c] + lam[c] + b[i * d + c] + m.beta() * state.xi[i * d + c]).collect();
        let cv = m.c_v(th, ch);
        let mu = sys.model.truncated_mobility(th, rho);
        let coeff = generic_coefficients(th, mu, cv, &de)?;
        let r = generic_residuals(&coeff, cv, &de);
        out.rank = out.rank.max(r.rank);
        out.first_row = out.first_row.max(r.first_row);
        out.second_row = out.second_row.max(r.second_row);
        out.min_diagonal = out.min_diagonal.min(r.min_diagonal);
        // Operator row acts on c_V times the entropy weight 1/c_V.
        ratio.push(cv * cv.recip());
    }
    let op = solver::lagged_operator(sys, &state.theta, &state.chi)?;
    let scale: f64 = op.faces().iter().map(|f| f.2).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    out.operator_row = op.flux_sum(&ratio).iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityPoint {
    pub t: f64,
    /// `Σ w |Δθ/Δt|^2`.
    pub theta_rate: f64,
    /// Discrete `|∇K(θ)|^2` seminorm.
    pub kirchhoff_seminorm: f64,
}

/// Indicators of `θ_t ∈ L^2` and `K(θ) ∈ L^∞(H^1)` along stored snapshots.
pub fn regularity_indicator(sys: &System, snaps: &[State]) -> Result<Vec<RegularityPoint>> {
    if !sys.model.uniqueness() {
        return Err(Error::Mode("regularity indicator needs uniqueness mode".into()));
    }
    let w = sys.grid.volumes();
    let mut out = Vec::with_capacity(snaps.len());
    for (k, s) in snaps.iter().enumerate() {
        let kt: Vec<f64> = s.theta.iter().map(|t| sys.model.kirchhoff(*t)).collect::<Result<_>>()?;
        let semi: f64 = sys.grid.interior_faces().iter().map(|f| f.area / f.dist * (kt[f.a] - kt[f.b]).powi(2)).sum();
        let rate = if k == 0 {
            0.0
        } else {
            let p = &snaps[k - 1];
            let dt = s.t - p.t;
            w.iter().zip(s.theta.iter().zip(&p.theta)).map(|(wi, (a, b))| wi * ((a - b) / dt).powi(2)).sum()
        };
        out.push(RegularityPoint { t: s.t, theta_rate: rate, kirchhoff_seminorm: semi });
    }
    Ok(out)
}

/// Default lag mode for diagnostics that replay a run.
pub const DEFAULT_LAG: LagMode = LagMode::PreviousStep;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ode_zero_rate_is_constant() {
        let w = lower_bound_ode(|v| v / (1.0 + v), |v| 1.0 + v, 0.0, 1.3, &[0.0, 0.5, 1.0], 0.01).unwrap();
        assert_eq!(w, vec![1.3, 1.3, 1.3]);
    }

    #[test]
    fn ode_matches_exponential() {
        let w = lower_bound_ode(|v| v / (1.0 + v), |v| 1.0 + v, 2.0, 1.0, &[0.0, 1.0], 1e-3).unwrap();
        assert!((w[1] - (-1f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn calibration_examples() {
        assert_eq!(calibrate_rho(0.0, 1).unwrap(), 1.0);
        let r = calibrate_rho(1.0, 1).unwrap();
        assert!((1e6..=1e9).contains(&r));
        assert!(moser_bound(1.0, 1, r) <= r / 2.0);
        assert!(moser_bound(1.0, 1, r / 1.01) > r / 2.02);
        assert!(calibrate_rho(2.0, 1).unwrap() >= r);
    }

    #[test]
    fn generic_corruption_detected() {
        let mut m = generic_coefficients(1.5, 2.0, 0.7, &[0.3, -1.1]).unwrap();
        assert!(generic_residuals(&m, 0.7, &[0.3, -1.1]).max() < 1e-15);
        m.m12[0] = -m.m12[0];
        assert!(generic_residuals(&m, 0.7, &[0.3, -1.1]).first_row > 1e-3);
    }
}
