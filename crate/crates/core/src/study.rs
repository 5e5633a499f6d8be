//! Multi-run protocols: time-step refinement, two-scale dependence,
//! the local limit of the nonlocal term and inclusion dependence.

use std::sync::Arc;

use crate::config::Built;
use crate::convex::{derivative_convergence, dependence_gap, inclusion_solve, ConvexPotential, InclusionProblem};
use crate::diagnostics::{dependence_stability, DependenceStability};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::nonlocal::{local_limit_error, LocalLimitReport};
use crate::solver::{self, SolverConfig, State};

/// A table of measured values with a pass/fail verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyReport {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<f64>>,
    pub passed: bool,
}

fn weighted_distance(w: &[f64], a: &State, b: &State, d: usize) -> f64 {
    let mut acc = 0.0;
    for (i, wi) in w.iter().enumerate() {
        let mut s = (a.theta[i] - b.theta[i]).powi(2);
        for c in 0..d {
            s += (a.chi[i * d + c] - b.chi[i * d + c]).powi(2);
        }
        acc += wi * s;
    }
    acc.sqrt()
}

/// Final states for `dt, dt/2, ..., dt/2^(levels-1)`.
pub fn refinement_runs(built: &Built, levels: usize) -> Result<Vec<(f64, State)>> {
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        let dt = built.solver.dt / f64::powi(2.0, k as i32);
        let cadence = built.solver.steps().max(1) << k;
        let cfg = SolverConfig { dt, cadence, ..built.solver };
        let tr = solver::run(&built.system, built.init.clone(), &cfg)?;
        out.push((dt, tr.final_state().clone()));
    }
    Ok(out)
}

/// Observed orders from successive differences of the final state.
///
/// With `exact`, errors are taken against that reference temperature field instead.
pub fn dt_refinement(built: &Built, levels: usize, exact: Option<&[f64]>, order_band: (f64, f64)) -> Result<StudyReport> {
    let min_levels = if exact.is_some() { 2 } else { 3 };
    if levels < min_levels {
        return Err(Error::Usage(format!("refinement needs at least {min_levels} levels")));
    }
    let runs = refinement_runs(built, levels)?;
    let w = built.system.grid.volumes();
    let d = built.system.components();
    let errors: Vec<(f64, f64)> = match exact {
        Some(reference) => runs
            .iter()
            .map(|(dt, s)| {
                let e = s.theta.iter().zip(reference).zip(w).map(|((a, b), wi)| wi * (a - b).powi(2)).sum::<f64>();
                (*dt, e.sqrt())
            })
            .collect(),
        None => runs.windows(2).map(|p| (p[0].0, weighted_distance(w, &p[0].1, &p[1].1, d))).collect(),
    };
    let mut rows = Vec::with_capacity(errors.len());
    let mut passed = true;
    for (k, (dt, e)) in errors.iter().enumerate() {
        let order = if k == 0 { f64::NAN } else { (errors[k - 1].1 / e).log2() };
        if k > 0 && !(order >= order_band.0 && order <= order_band.1) {
            passed = false;
        }
        rows.push(vec![*dt, *e, order]);
    }
    Ok(StudyReport { header: vec!["dt", "error", "order"], rows, passed })
}

/// Temperature of one cell cooled or heated through a Robin face, `c_V = θ/(1+θ)`.
///
/// Solves `ln(1+θ) + a ln|θ-a| = ln(1+θ0) + a ln|θ0-a| - (1+a) κ t` with `a = θ_Γ`.
pub fn single_cell_robin_exact(theta0: f64, theta_gamma: f64, kappa: f64, t: f64) -> Result<f64> {
    let a = theta_gamma;
    if !(theta0 > 0.0) || !(a > 0.0) || !(kappa >= 0.0) {
        return Err(Error::Usage("exact solution needs positive temperatures and kappa >= 0".into()));
    }
    if theta0 == a || kappa * t == 0.0 {
        return Ok(theta0);
    }
    let h = |th: f64| (1.0 + th).ln() + a * (th - a).abs().ln();
    let target = h(theta0) - (1.0 + a) * kappa * t;
    // h is monotone on the side of a where θ0 lies and tends to -∞ at a.
    let (mut lo, mut hi) = if theta0 > a { (a, theta0) } else { (theta0, a) };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let inside = if theta0 > a { h(mid) > target } else { h(mid) < target };
        if inside {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// `θ0 + δ·bump` against `θ0`, then with `δ/2`.
pub fn dependence_study(built: &Built, delta: f64, width: f64, factor: f64) -> Result<(StudyReport, DependenceStability)> {
    let grid = &built.system.grid;
    let mid: Vec<f64> = grid.lengths().iter().map(|l| 0.5 * l).collect();
    let bump: Vec<f64> = grid
        .centers()
        .iter()
        .map(|c| {
            let r2: f64 = (0..grid.dim()).map(|k| (c[k] - mid[k]).powi(2)).sum();
            delta * (-r2 / (width * width)).exp()
        })
        .collect();
    let zero = vec![0.0; built.init.chi.len()];
    let st = dependence_stability(&built.system, &built.init, &built.solver, &bump, &zero, factor)?;
    let rows = vec![
        vec![delta, st.coarse.lhs, st.coarse.rhs, st.coarse.ratio],
        vec![0.5 * delta, st.fine.lhs, st.fine.rhs, st.fine.ratio],
    ];
    Ok((StudyReport { header: vec!["delta", "lhs", "rhs", "ratio"], rows, passed: st.stable }, st))
}

/// Top-hat local limit for the linear profile `χ = x_0 / L_0` over the given `n`.
pub fn local_limit_study(grid: &Grid, ns: &[f64], final_fraction: f64) -> Result<(StudyReport, Vec<LocalLimitReport>)> {
    let len = grid.lengths()[0];
    let mut reports = Vec::with_capacity(ns.len());
    for &n in ns {
        reports.push(local_limit_error(grid, n, |c| c[0] / len, |_| 1.0 / (len * len))?);
    }
    let monotone = reports.windows(2).all(|w| w[1].mean_error < w[0].mean_error);
    let last = reports.last().ok_or_else(|| Error::Usage("local limit needs at least one n".into()))?;
    let passed = monotone && last.mean_error <= final_fraction * last.reference;
    let rows = reports.iter().map(|r| vec![r.n, r.nu, r.mean_error, r.reference, r.mean_error / r.reference]).collect();
    Ok((StudyReport { header: vec!["n", "nu", "mean_error", "reference", "relative_error"], rows, passed }, reports))
}

/// Measured constants of the inclusion dependence protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct InclusionStudy {
    /// `(δ, dt, L)` for each perturbation size and step.
    pub lipschitz: Vec<(f64, f64, f64)>,
    /// `L^2` distances of `ζ̇_n` to `ζ̇` for `g_n = g + 1/n`.
    pub derivative_distances: Vec<(usize, f64)>,
    pub lipschitz_spread: f64,
    pub monotone: bool,
}

fn unit(d: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[0] = 1.0;
    e
}

/// Runs both inclusion protocols on `potential`.
///
/// The first pairs `g = e_1` with `g = (1 + δ) e_1` at unit `α`; the second
/// compares `g_n = g + e_1 / n` with `g = cos(2πt) e_1` at `α = 200 (1 + sin(2πt) / 2)`.
pub fn inclusion_dependence(potential: &ConvexPotential, deltas: &[f64], dts: &[f64], ns: &[usize]) -> Result<(StudyReport, InclusionStudy)> {
    let d = potential.dim();
    let zeta0 = potential.prox(&vec![0.5; d], 1.0)?;
    let c0 = potential.subdiff_select(&zeta0)?.min_norm_value();
    let e1 = unit(d);
    let dmax = deltas.iter().cloned().fold(0.0, f64::max);
    let nmin = ns.iter().cloned().min().unwrap_or(1).max(1) as f64;
    let c = c0.max(1.0 + dmax).max(1.0 + 1.0 / nmin);
    let constant = |s: f64| -> InclusionProblem {
        let g = e1.iter().map(|v| s * v).collect::<Vec<f64>>();
        InclusionProblem::new(Arc::new(|_| 1.0), Arc::new(move |_| g.clone()), zeta0.clone(), 1.0, 1.0, c)
    };
    let mut lipschitz = Vec::new();
    for &dt in dts {
        let base = inclusion_solve(&constant(1.0), potential, dt)?;
        for &delta in deltas {
            let pert = inclusion_solve(&constant(1.0 + delta), potential, dt)?;
            lipschitz.push((delta, dt, dependence_gap(&base, &pert, potential)?.lipschitz_constant));
        }
    }
    let lmax = lipschitz.iter().map(|l| l.2).fold(0.0, f64::max);
    let lmin = lipschitz.iter().map(|l| l.2).fold(f64::INFINITY, f64::min);
    let spread = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };

    let tau = std::f64::consts::TAU;
    let alpha: Arc<dyn Fn(f64) -> f64 + Send + Sync> = Arc::new(move |t: f64| 200.0 * (1.0 + 0.5 * (tau * t).sin()));
    let shifted = |shift: f64| -> InclusionProblem {
        let e = e1.clone();
        let g = Arc::new(move |t: f64| e.iter().map(|v| v * ((tau * t).cos() + shift)).collect::<Vec<f64>>());
        InclusionProblem::new(alpha.clone(), g, zeta0.clone(), 1.0, 100.0, c)
    };
    let dt = dts.iter().cloned().fold(f64::INFINITY, f64::min);
    let limit = inclusion_solve(&shifted(0.0), potential, dt)?;
    let seq: Vec<_> = ns.iter().map(|&n| inclusion_solve(&shifted(1.0 / n as f64), potential, dt)).collect::<Result<_>>()?;
    let conv = derivative_convergence(&limit, &seq)?;
    let derivative_distances: Vec<(usize, f64)> = ns.iter().cloned().zip(conv.distances.iter().cloned()).collect();

    let mut rows = Vec::new();
    for (delta, dt, l) in &lipschitz {
        rows.push(vec![*delta, *dt, *l, f64::NAN, f64::NAN]);
    }
    for (n, dist) in &derivative_distances {
        rows.push(vec![f64::NAN, dt, f64::NAN, *n as f64, *dist]);
    }
    let study = InclusionStudy { lipschitz, derivative_distances, lipschitz_spread: spread, monotone: conv.monotone };
    let last = study.derivative_distances.last().map(|p| p.1).unwrap_or(f64::INFINITY);
    let passed = spread <= 1.5 && study.monotone && last < 1e-4;
    Ok((StudyReport { header: vec!["delta", "dt", "lipschitz", "n", "derivative_distance"], rows, passed }, study))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_single_cell_limits() {
        assert_eq!(single_cell_robin_exact(2.0, 1.0, 1.0, 0.0).unwrap(), 2.0);
        let late = single_cell_robin_exact(2.0, 1.0, 1.0, 20.0).unwrap();
        assert!((late - 1.0).abs() < 1e-6);
        let warm = single_cell_robin_exact(0.5, 1.0, 1.0, 0.3).unwrap();
        assert!(warm > 0.5 && warm < 1.0);
    }

    #[test]
    fn exact_single_cell_satisfies_ode() {
        // c_V(θ) θ' = -κ (θ - a) with c_V = θ / (1 + θ).
        let (a, k, t, h) = (1.0, 2.0, 0.2, 1e-5);
        let th = single_cell_robin_exact(2.0, a, k, t).unwrap();
        let dth = (single_cell_robin_exact(2.0, a, k, t + h).unwrap() - single_cell_robin_exact(2.0, a, k, t - h).unwrap()) / (2.0 * h);
        let lhs = th / (1.0 + th) * dth;
        assert!((lhs + k * (th - a)).abs() < 1e-6);
    }
}
