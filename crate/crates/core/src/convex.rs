//! Convex potentials: indicators of boxes, balls and the corner simplex, and
//! gauge potentials `f(M_K(x))`. Provides evaluation, subdifferentials,
//! proximal maps and an implicit Euler solver for `alpha z' + d phi(z) ∋ g`.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quad;

/// Relative slack used when deciding membership of points produced by a
/// projection (radial scaling and simplex sums are not exact in floating point).
const MEMBERSHIP_TOL: f64 = 1e-12;

pub const PROX_TOL: f64 = 1e-12;
pub const PROX_MAX_ITER: usize = 100;

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn dist(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Increasing convex profile `f` with `f(0) = f'(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Profile {
    /// `s^2 / 2`
    Quadratic,
    /// `s^p / p`, `p >= 2`
    Power { p: f64 },
    /// `-log(1 - s^2)` on `[0, 1)`
    LogBarrier,
}

impl Profile {
    pub fn f(&self, s: f64) -> f64 {
        match *self {
            Profile::Quadratic => 0.5 * s * s,
            Profile::Power { p } => s.powf(p) / p,
            Profile::LogBarrier => {
                if s >= 1.0 {
                    f64::INFINITY
                } else {
                    -(1.0 - s * s).ln()
                }
            }
        }
    }

    pub fn fp(&self, s: f64) -> f64 {
        match *self {
            Profile::Quadratic => s,
            Profile::Power { p } => s.powf(p - 1.0),
            Profile::LogBarrier => {
                if s >= 1.0 {
                    f64::INFINITY
                } else {
                    2.0 * s / (1.0 - s * s)
                }
            }
        }
    }

    pub fn fpp(&self, s: f64) -> f64 {
        match *self {
            Profile::Quadratic => 1.0,
            Profile::Power { p } => (p - 1.0) * s.powf(p - 2.0),
            Profile::LogBarrier => {
                let q = 1.0 - s * s;
                2.0 * (1.0 + s * s) / (q * q)
            }
        }
    }

    /// Right end `f0` of the domain `[0, f0)`.
    pub fn f0(&self) -> f64 {
        match self {
            Profile::LogBarrier => 1.0,
            _ => f64::INFINITY,
        }
    }

    pub fn sup_fp(&self) -> f64 {
        f64::INFINITY
    }

    /// Inverse of `f'` on `[0, sup f')`.
    pub fn fp_inv(&self, y: f64) -> f64 {
        match *self {
            Profile::Quadratic => y,
            Profile::Power { p } => y.powf(1.0 / (p - 1.0)),
            Profile::LogBarrier => y / (1.0 + (1.0 + y * y).sqrt()),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Profile::Power { p } = self {
            if !(*p >= 2.0 && p.is_finite()) {
                return Err(Error::Config(format!("power profile exponent must be >= 2, got {p}")));
            }
        }
        Ok(())
    }
}

/// Convex body `K` with `B_r(0) ⊂ K ⊂ B_R(0)`.
#[derive(Debug, Clone, PartialEq)]
pub enum GaugeBody {
    Ball { radius: f64, dim: usize },
    /// Symmetric box `prod [-a_i, a_i]`.
    Box { half_widths: Vec<f64> },
}

impl GaugeBody {
    pub fn dim(&self) -> usize {
        match self {
            GaugeBody::Ball { dim, .. } => *dim,
            GaugeBody::Box { half_widths } => half_widths.len(),
        }
    }

    pub fn inner_radius(&self) -> f64 {
        match self {
            GaugeBody::Ball { radius, .. } => *radius,
            GaugeBody::Box { half_widths } => half_widths.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn outer_radius(&self) -> f64 {
        match self {
            GaugeBody::Ball { radius, .. } => *radius,
            GaugeBody::Box { half_widths } => norm(half_widths),
        }
    }

    /// Minkowski functional `inf { s > 0 : x / s ∈ K }`.
    pub fn gauge(&self, x: &[f64]) -> f64 {
        match self {
            GaugeBody::Ball { radius, .. } => norm(x) / radius,
            GaugeBody::Box { half_widths } => x
                .iter()
                .zip(half_widths)
                .map(|(v, a)| v.abs() / a)
                .fold(0.0, f64::max),
        }
    }

    /// Euclidean projection onto `sK`.
    fn project_scaled(&self, z: &[f64], s: f64) -> Vec<f64> {
        match self {
            GaugeBody::Ball { radius, .. } => {
                let n = norm(z);
                let cap = s * radius;
                if n <= cap {
                    z.to_vec()
                } else {
                    z.iter().map(|v| v * cap / n).collect()
                }
            }
            GaugeBody::Box { half_widths } => z
                .iter()
                .zip(half_widths)
                .map(|(v, a)| v.clamp(-s * a, s * a))
                .collect(),
        }
    }

    /// `-(d/ds) dist^2(z, sK) / 2` and its derivative in `s` (up to sign).
    fn dist_slope(&self, z: &[f64], s: f64) -> (f64, f64) {
        match self {
            GaugeBody::Ball { radius, .. } => {
                let gap = norm(z) - s * radius;
                if gap > 0.0 {
                    (radius * gap, radius * radius)
                } else {
                    (0.0, 0.0)
                }
            }
            GaugeBody::Box { half_widths } => {
                let mut d1 = 0.0;
                let mut d2 = 0.0;
                for (v, a) in z.iter().zip(half_widths) {
                    let gap = v.abs() - s * a;
                    if gap > 0.0 {
                        d1 += a * gap;
                        d2 += a * a;
                    }
                }
                (d1, d2)
            }
        }
    }

    /// Vertices of `∂M_K(x)` for `x ≠ 0` and its minimal-norm element.
    fn gauge_subdiff(&self, x: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        match self {
            GaugeBody::Ball { radius, .. } => {
                let n = norm(x);
                let w: Vec<f64> = x.iter().map(|v| v / (radius * n)).collect();
                (vec![w.clone()], w)
            }
            GaugeBody::Box { half_widths } => {
                let m = self.gauge(x);
                let active: Vec<usize> = (0..x.len())
                    .filter(|&i| x[i].abs() / half_widths[i] >= m * (1.0 - MEMBERSHIP_TOL))
                    .collect();
                let d = x.len();
                let vertices = active
                    .iter()
                    .map(|&i| {
                        let mut e = vec![0.0; d];
                        e[i] = x[i].signum() / half_widths[i];
                        e
                    })
                    .collect();
                // Weights proportional to a_i^2 minimise the norm of the hull element.
                let sa2: f64 = active.iter().map(|&i| half_widths[i] * half_widths[i]).sum();
                let mut w = vec![0.0; d];
                for &i in &active {
                    w[i] = x[i].signum() * half_widths[i] / sa2;
                }
                (vertices, w)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            GaugeBody::Ball { radius, dim } => {
                if !(*radius > 0.0 && radius.is_finite()) || *dim == 0 {
                    return Err(Error::Config(format!("ball needs radius > 0 and dim >= 1, got {radius}, {dim}")));
                }
            }
            GaugeBody::Box { half_widths } => {
                if half_widths.is_empty() || half_widths.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                    return Err(Error::Config("box half-widths must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConvexPotential {
    IndicatorBox { lo: Vec<f64>, hi: Vec<f64> },
    IndicatorBall { radius: f64, dim: usize },
    /// Indicator of `{x >= 0, sum x <= 1}` in `R^d`.
    IndicatorSimplex { dim: usize },
    Gauge { body: GaugeBody, profile: Profile },
}

/// Description of `∂φ(x)`.
#[derive(Debug, Clone, PartialEq)]
pub enum Subdifferential {
    /// Cone generated by the listed outward normals; `{0}` when empty.
    NormalCone { generators: Vec<Vec<f64>> },
    /// `factor` times the convex hull of `vertices`; `{0}` at the origin.
    ScaledHull { factor: f64, vertices: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubdiffSelect {
    pub set: Subdifferential,
    pub min_norm: Vec<f64>,
}

impl SubdiffSelect {
    pub fn min_norm_value(&self) -> f64 {
        norm(&self.min_norm)
    }

    /// Finitely many elements of the set, useful for sampling checks. For
    /// cones the generators are scaled by `cone_scale`.
    pub fn samples(&self, cone_scale: f64) -> Vec<Vec<f64>> {
        let mut out = vec![self.min_norm.clone()];
        match &self.set {
            Subdifferential::NormalCone { generators } => {
                for g in generators {
                    out.push(g.iter().map(|v| v * cone_scale).collect());
                }
            }
            Subdifferential::ScaledHull { factor, vertices } => {
                for v in vertices {
                    out.push(v.iter().map(|c| c * factor).collect());
                }
            }
        }
        out
    }
}

impl ConvexPotential {
    pub fn validate(&self) -> Result<()> {
        match self {
            ConvexPotential::IndicatorBox { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::Config("box bounds must be nonempty and of equal length".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
                    return Err(Error::Config("box bounds must satisfy lo <= hi".into()));
                }
            }
            ConvexPotential::IndicatorBall { radius, dim } => {
                if !(*radius > 0.0 && radius.is_finite()) || *dim == 0 {
                    return Err(Error::Config("ball needs radius > 0 and dim >= 1".into()));
                }
            }
            ConvexPotential::IndicatorSimplex { dim } => {
                if *dim == 0 {
                    return Err(Error::Config("simplex dimension must be >= 1".into()));
                }
            }
            ConvexPotential::Gauge { body, profile } => {
                body.validate()?;
                profile.validate()?;
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexPotential::IndicatorBox { lo, .. } => lo.len(),
            ConvexPotential::IndicatorBall { dim, .. } => *dim,
            ConvexPotential::IndicatorSimplex { dim } => *dim,
            ConvexPotential::Gauge { body, .. } => body.dim(),
        }
    }

    pub fn is_indicator(&self) -> bool {
        !matches!(self, ConvexPotential::Gauge { .. })
    }

    /// `φ(x)`, `+∞` off the effective domain.
    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.in_domain(x) {
            match self {
                ConvexPotential::Gauge { body, profile } => profile.f(body.gauge(x)),
                _ => 0.0,
            }
        } else {
            f64::INFINITY
        }
    }

    pub fn in_domain(&self, x: &[f64]) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            ConvexPotential::IndicatorBox { lo, hi } => {
                x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= *l && *v <= *h)
            }
            ConvexPotential::IndicatorBall { radius, .. } => norm(x) <= radius * (1.0 + MEMBERSHIP_TOL),
            ConvexPotential::IndicatorSimplex { .. } => {
                x.iter().all(|v| *v >= 0.0) && x.iter().sum::<f64>() <= 1.0 + MEMBERSHIP_TOL
            }
            ConvexPotential::Gauge { body, profile } => body.gauge(x) < profile.f0(),
        }
    }

    /// Subdifferential at `x` together with its minimal-norm element.
    pub fn subdiff_select(&self, x: &[f64]) -> Result<SubdiffSelect> {
        if !self.in_domain(x) {
            return Err(Error::Domain(format!("point {x:?} outside the effective domain")));
        }
        let d = x.len();
        let zero = vec![0.0; d];
        let unit = |i: usize, s: f64| {
            let mut e = vec![0.0; d];
            e[i] = s;
            e
        };
        let set = match self {
            ConvexPotential::IndicatorBox { lo, hi } => {
                let mut generators = Vec::new();
                for i in 0..d {
                    if x[i] <= lo[i] {
                        generators.push(unit(i, -1.0));
                    }
                    if x[i] >= hi[i] {
                        generators.push(unit(i, 1.0));
                    }
                }
                Subdifferential::NormalCone { generators }
            }
            ConvexPotential::IndicatorBall { radius, .. } => {
                let n = norm(x);
                let generators = if n >= radius * (1.0 - MEMBERSHIP_TOL) {
                    vec![x.iter().map(|v| v / n).collect()]
                } else {
                    vec![]
                };
                Subdifferential::NormalCone { generators }
            }
            ConvexPotential::IndicatorSimplex { .. } => {
                let mut generators: Vec<Vec<f64>> = (0..d).filter(|&i| x[i] <= 0.0).map(|i| unit(i, -1.0)).collect();
                if x.iter().sum::<f64>() >= 1.0 - MEMBERSHIP_TOL {
                    generators.push(vec![1.0; d]);
                }
                Subdifferential::NormalCone { generators }
            }
            ConvexPotential::Gauge { body, profile } => {
                let m = body.gauge(x);
                if m == 0.0 {
                    return Ok(SubdiffSelect {
                        set: Subdifferential::ScaledHull { factor: 0.0, vertices: vec![zero.clone()] },
                        min_norm: zero,
                    });
                }
                let c = profile.fp(m);
                let (vertices, w) = body.gauge_subdiff(x);
                return Ok(SubdiffSelect {
                    set: Subdifferential::ScaledHull { factor: c, vertices },
                    min_norm: w.iter().map(|v| v * c).collect(),
                });
            }
        };
        Ok(SubdiffSelect { set, min_norm: zero })
    }

    /// Membership in `D_C(φ)`: the minimal-norm subgradient has norm at most `c`.
    pub fn in_dc(&self, x: &[f64], c: f64) -> bool {
        self.subdiff_select(x).map(|s| s.min_norm_value() <= c * (1.0 + 1e-12) + 1e-14).unwrap_or(false)
    }

    /// Unique minimiser of `φ(y) + (ρ/2)|y - z|^2`.
    pub fn prox(&self, z: &[f64], rho: f64) -> Result<Vec<f64>> {
        if !(rho > 0.0) {
            return Err(Error::Precondition(format!("prox weight must be positive, got {rho}")));
        }
        if z.len() != self.dim() {
            return Err(Error::Usage(format!("prox input has length {}, expected {}", z.len(), self.dim())));
        }
        match self {
            ConvexPotential::IndicatorBox { lo, hi } => {
                Ok(z.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect())
            }
            ConvexPotential::IndicatorBall { radius, .. } => {
                let n = norm(z);
                if n <= *radius {
                    Ok(z.to_vec())
                } else {
                    Ok(z.iter().map(|v| v * radius / n).collect())
                }
            }
            ConvexPotential::IndicatorSimplex { .. } => Ok(project_corner_simplex(z)),
            ConvexPotential::Gauge { body, profile } => prox_gauge(body, profile, z, rho),
        }
    }

    /// Constant `D` with `|g - alpha z'| <= D C` along solutions of the inclusion.
    pub fn d_bound(&self) -> f64 {
        match self {
            ConvexPotential::Gauge { body, .. } => body.outer_radius() / body.inner_radius(),
            _ => 1.0,
        }
    }

    /// Threshold `C1 = f((f')^{-1}(C R))`; `+∞` when `C R` exceeds the range of `f'`.
    pub fn c1_threshold(&self, c: f64) -> Result<f64> {
        match self {
            ConvexPotential::Gauge { body, profile } => {
                if c < 0.0 {
                    return Err(Error::Precondition(format!("bound C must be nonnegative, got {c}")));
                }
                let y = c * body.outer_radius();
                if y >= profile.sup_fp() {
                    return Ok(f64::INFINITY);
                }
                let s = profile.fp_inv(y);
                if s >= profile.f0() {
                    return Ok(f64::INFINITY);
                }
                Ok(profile.f(s))
            }
            _ => Err(Error::Usage("threshold C1 is defined for gauge potentials only".into())),
        }
    }
}

/// Projection onto `{x >= 0, sum x <= 1}`.
pub fn project_corner_simplex(z: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    let mut u = z.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, v) in u.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (j + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    z.iter().map(|v| (v - tau).max(0.0)).collect()
}

fn prox_gauge(body: &GaugeBody, profile: &Profile, z: &[f64], rho: f64) -> Result<Vec<f64>> {
    let mz = body.gauge(z);
    if mz == 0.0 {
        return Ok(vec![0.0; z.len()]);
    }
    let hi = mz.min(profile.f0());
    let scale = 1.0 + rho * body.dist_slope(z, 0.0).0;
    let h = |s: f64| {
        let (d1, d2) = body.dist_slope(z, s);
        (profile.fp(s) - rho * d1, profile.fpp(s) + rho * d2)
    };
    let s = quad::newton_bracketed(h, 0.0, hi, 0.0, PROX_TOL * scale, PROX_MAX_ITER).map_err(|e| match e {
        Error::Numerical { residual, detail, .. } => Error::numerical("gauge prox", detail, residual),
        other => other,
    })?;
    let s = if s >= profile.f0() { profile.f0() * (1.0 - f64::EPSILON) } else { s };
    Ok(body.project_scaled(z, s))
}

pub type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

/// Data of `alpha(t) z' + ∂φ(z) ∋ g(t)`, `z(0) = z0`.
#[derive(Clone)]
pub struct InclusionProblem {
    pub alpha: ScalarFn,
    pub g: VectorFn,
    pub zeta0: Vec<f64>,
    pub horizon: f64,
    pub alpha0: f64,
    pub c_bound: f64,
}

impl InclusionProblem {
    pub fn new(alpha: ScalarFn, g: VectorFn, zeta0: Vec<f64>, horizon: f64, alpha0: f64, c_bound: f64) -> Self {
        InclusionProblem { alpha, g, zeta0, horizon, alpha0, c_bound }
    }
}

#[derive(Debug, Clone)]
pub struct InclusionTrajectory {
    pub dt: f64,
    pub times: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    /// Selection `g - alpha z'`; entry 0 is the minimal-norm subgradient at `z0`.
    pub xi: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub g: Vec<Vec<f64>>,
    pub alpha0: f64,
    pub c_bound: f64,
}

impl InclusionTrajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Difference quotient on step `k >= 1`.
    pub fn derivative(&self, k: usize) -> Vec<f64> {
        self.zeta[k].iter().zip(&self.zeta[k - 1]).map(|(a, b)| (a - b) / self.dt).collect()
    }

    pub fn max_selection(&self) -> f64 {
        self.xi.iter().skip(1).map(|x| norm(x)).fold(0.0, f64::max)
    }
}

/// Implicit Euler with exact prox: `z_k = prox(z_{k-1} + dt g_k / a_k, a_k / dt)`.
pub fn inclusion_solve(problem: &InclusionProblem, potential: &ConvexPotential, dt: f64) -> Result<InclusionTrajectory> {
    if !(dt > 0.0) || !(problem.horizon > 0.0) {
        return Err(Error::Precondition(format!("need dt > 0 and horizon > 0, got {dt}, {}", problem.horizon)));
    }
    if !(problem.alpha0 > 0.0) {
        return Err(Error::Precondition("alpha0 must be positive".into()));
    }
    let c = problem.c_bound;
    let sel0 = potential.subdiff_select(&problem.zeta0).map_err(|_| {
        Error::Precondition(format!("initial point {:?} outside the domain", problem.zeta0))
    })?;
    if sel0.min_norm_value() > c * (1.0 + 1e-12) + 1e-14 {
        return Err(Error::Precondition(format!(
            "initial point not in D_C: minimal subgradient norm {} exceeds C = {c}",
            sel0.min_norm_value()
        )));
    }
    let n = ((problem.horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let dt = problem.horizon / n as f64;
    let mut traj = InclusionTrajectory {
        dt,
        times: vec![0.0],
        zeta: vec![problem.zeta0.clone()],
        xi: vec![sel0.min_norm],
        alpha: vec![(problem.alpha)(0.0)],
        g: vec![(problem.g)(0.0)],
        alpha0: problem.alpha0,
        c_bound: c,
    };
    for k in 1..=n {
        let t = k as f64 * dt;
        let a = (problem.alpha)(t);
        let g = (problem.g)(t);
        if a < problem.alpha0 * (1.0 - 1e-12) {
            return Err(Error::Precondition(format!("alpha({t}) = {a} below alpha0")));
        }
        if norm(&g) > c * (1.0 + 1e-12) {
            return Err(Error::Precondition(format!("|g({t})| = {} exceeds C = {c}", norm(&g))));
        }
        let prev = traj.zeta.last().unwrap();
        let z: Vec<f64> = prev.iter().zip(&g).map(|(p, gi)| p + dt * gi / a).collect();
        let next = potential.prox(&z, a / dt)?;
        let xi: Vec<f64> = g.iter().zip(next.iter().zip(prev)).map(|(gi, (n1, p))| gi - a * (n1 - p) / dt).collect();
        traj.times.push(t);
        traj.zeta.push(next);
        traj.xi.push(xi);
        traj.alpha.push(a);
        traj.g.push(g);
    }
    Ok(traj)
}

/// Per-step `φ(z_k) - φ(z_{k-1}) - dt (|g|^2 - |ξ|^2 - |α z'|^2) / (2α)`; nonpositive up to rounding.
pub fn dissipation_defects(traj: &InclusionTrajectory, potential: &ConvexPotential) -> Vec<f64> {
    (1..traj.times.len())
        .map(|k| {
            let a = traj.alpha[k];
            let zd = traj.derivative(k);
            let az: Vec<f64> = zd.iter().map(|v| a * v).collect();
            let g2 = dot(&traj.g[k], &traj.g[k]);
            let x2 = dot(&traj.xi[k], &traj.xi[k]);
            let rhs = traj.dt * (g2 - x2 - dot(&az, &az)) / (2.0 * a);
            potential.eval(&traj.zeta[k]) - potential.eval(&traj.zeta[k - 1]) - rhs
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependenceReport {
    pub sup_distance: f64,
    pub derivative_l1: f64,
    pub initial_distance: f64,
    /// `∫ |1/α1 - 1/α2| + |g1 - g2|` over the horizon.
    pub data_integral: f64,
    /// Smallest `L` with `|Δz(t)| <= |Δz0| + L ∫_0^t (...)` on the grid.
    pub lipschitz_constant: f64,
    /// Smallest `R` with `∫|Δz'| + |Δz(t)| <= R (|Δz0| + ∫_0^t (...))`.
    pub cdg_constant: f64,
    /// `max((D + 1) C, 1/α0)`, a constant for which the bound is guaranteed.
    pub theory_constant: f64,
    pub bound_holds: bool,
}

pub fn dependence_gap(
    run1: &InclusionTrajectory,
    run2: &InclusionTrajectory,
    potential: &ConvexPotential,
) -> Result<DependenceReport> {
    if run1.times.len() != run2.times.len()
        || run1.times.iter().zip(&run2.times).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + a.abs()))
    {
        return Err(Error::Usage("dependence gap needs runs on the same time grid".into()));
    }
    let c = run1.c_bound.max(run2.c_bound);
    let a0 = run1.alpha0.min(run2.alpha0);
    let theory = ((potential.d_bound() + 1.0) * c).max(1.0 / a0);
    let d0 = dist(&run1.zeta[0], &run2.zeta[0]);
    let mut sup = d0;
    let mut data = 0.0;
    let mut dl1 = 0.0;
    let mut lip: f64 = 0.0;
    let mut cdg: f64 = 0.0;
    let mut holds = true;
    for k in 1..run1.times.len() {
        let dt = run1.dt;
        data += dt * ((1.0 / run1.alpha[k] - 1.0 / run2.alpha[k]).abs() + dist(&run1.g[k], &run2.g[k]));
        dl1 += dt * dist(&run1.derivative(k), &run2.derivative(k));
        let dk = dist(&run1.zeta[k], &run2.zeta[k]);
        sup = sup.max(dk);
        if data > 0.0 {
            lip = lip.max((dk - d0) / data);
        }
        let denom = d0 + data;
        if denom > 0.0 {
            cdg = cdg.max((dl1 + dk) / denom);
        }
        if dk > d0 + theory * data + 1e-12 * (1.0 + dk) {
            holds = false;
        }
    }
    Ok(DependenceReport {
        sup_distance: sup,
        derivative_l1: dl1,
        initial_distance: d0,
        data_integral: data,
        lipschitz_constant: lip,
        cdg_constant: cdg,
        theory_constant: theory,
        bound_holds: holds,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeConvergence {
    /// `L^2(0, T)` distances of the discrete derivatives to the limit run.
    pub distances: Vec<f64>,
    pub monotone: bool,
}

pub fn derivative_convergence(limit: &InclusionTrajectory, sequence: &[InclusionTrajectory]) -> Result<DerivativeConvergence> {
    let mut distances = Vec::with_capacity(sequence.len());
    for run in sequence {
        if run.times.len() != limit.times.len() {
            return Err(Error::Usage("derivative convergence needs runs on the same time grid".into()));
        }
        let mut acc = 0.0;
        for k in 1..run.times.len() {
            let d = dist(&run.derivative(k), &limit.derivative(k));
            acc += run.dt * d * d;
        }
        distances.push(acc.sqrt());
    }
    let monotone = distances.windows(2).all(|w| w[1] <= w[0]);
    Ok(DerivativeConvergence { distances, monotone })
}

/// Radical-inverse quasi-random point in `[0, 1)^d`.
pub fn halton(index: usize, dim: usize) -> Vec<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    (0..dim)
        .map(|j| {
            let b = PRIMES[j % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= b as f64;
                r += f * (i % b) as f64;
                i /= b;
            }
            r
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdCheck {
    pub c1: f64,
    pub samples: usize,
    pub below: usize,
    pub above: usize,
    /// Largest subgradient norm seen with `φ <= C1`, over `(R/r) C`.
    pub worst_upper_ratio: f64,
    /// Smallest minimal-norm subgradient seen with `φ >= C1`, over `C`.
    pub worst_lower_ratio: f64,
    pub holds: bool,
}

/// Samples the two implications attached to `C1` at quasi-random points.
pub fn verify_c1_implications(potential: &ConvexPotential, c: f64, samples: usize) -> Result<ThresholdCheck> {
    let (body, profile) = match potential {
        ConvexPotential::Gauge { body, profile } => (body, profile),
        _ => return Err(Error::Usage("threshold checks need a gauge potential".into())),
    };
    let c1 = potential.c1_threshold(c)?;
    let d = body.dim();
    let s_star = profile.fp_inv(c * body.outer_radius());
    let s_max = (2.0 * s_star).max(1e-3).min(profile.f0() * (1.0 - 1e-9));
    let ratio_r = body.outer_radius() / body.inner_radius();
    let mut below = 0;
    let mut above = 0;
    let mut up: f64 = 0.0;
    let mut low = f64::INFINITY;
    for i in 0..samples {
        let u = halton(i, d + 1);
        let dir: Vec<f64> = u[..d].iter().map(|v| 2.0 * v - 1.0).collect();
        let mdir = body.gauge(&dir);
        if mdir == 0.0 {
            continue;
        }
        let s = u[d] * s_max;
        let x: Vec<f64> = dir.iter().map(|v| v * s / mdir).collect();
        let phi = potential.eval(&x);
        let sel = potential.subdiff_select(&x)?;
        if phi <= c1 {
            below += 1;
            for e in sel.samples(1.0) {
                up = up.max(norm(&e) / (ratio_r * c).max(f64::MIN_POSITIVE));
            }
        }
        if phi >= c1 {
            above += 1;
            low = low.min(sel.min_norm_value() / c.max(f64::MIN_POSITIVE));
        }
    }
    let tol = 1e-9;
    let holds = up <= 1.0 + tol && (above == 0 || low >= 1.0 - tol);
    Ok(ThresholdCheck {
        c1,
        samples,
        below,
        above,
        worst_upper_ratio: up,
        worst_lower_ratio: if above == 0 { f64::INFINITY } else { low },
        holds,
    })
}
