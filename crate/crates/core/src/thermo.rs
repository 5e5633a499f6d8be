//! Constitutive layer: heat capacity, internal energy, entropy, heat
//! content, their phase gradients, truncations, GENERIC coefficients and
//! the model-contract validator.

use std::sync::Arc;

use crate::convex::{halton, ConvexPotential};
use crate::error::{Contract, Error, Result};
use crate::quad;

/// Quadrature tolerance for models without closed forms.
pub const QUAD_TOL: f64 = 1e-12;

/// A constitutive model. Only `c_v` and its phase gradient are needed for
/// the thermal potentials; the provided methods integrate them numerically
/// and may be overridden with closed forms.
pub trait Constitutive: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &str;
    /// Number of phase components `d`.
    fn components(&self) -> usize;
    fn c_v(&self, theta: f64, chi: &[f64]) -> f64;
    fn c_v_chi(&self, theta: f64, chi: &[f64], out: &mut [f64]);
    fn lambda(&self, chi: &[f64]) -> f64;
    fn lambda_grad(&self, chi: &[f64], out: &mut [f64]);
    fn sigma(&self, chi: &[f64]) -> f64;
    fn sigma_grad(&self, chi: &[f64], out: &mut [f64]);
    fn beta(&self) -> f64;
    fn mu(&self, theta: f64) -> f64;
    fn conductivity(&self, theta: f64, chi: &[f64]) -> f64;
    /// Declared clipping interval of `k`.
    fn conductivity_bounds(&self) -> (f64, f64);

    /// `e = ∫_0^θ c_V` and `e_χ = ∫_0^θ (c_V)_χ`.
    fn energy(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_theta(theta)?;
        let e = quad::integrate(|t| self.c_v(t, chi), 0.0, theta, QUAD_TOL)?;
        let ex = integrate_components(self.components(), |t, out| self.c_v_chi(t, chi, out), theta, false)?;
        Ok((e, ex))
    }

    /// `s = ∫_0^θ c_V / τ` and `s_χ = ∫_0^θ (c_V)_χ / τ`.
    fn entropy(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_theta(theta)?;
        let s = quad::integrate_from_zero(|t| if t > 0.0 { self.c_v(t, chi) / t } else { 0.0 }, theta, QUAD_TOL)
            .map_err(|e| Error::contract(Contract::EntropyIntegrable, e.to_string()))?;
        let sx = integrate_components(self.components(), |t, out| self.c_v_chi(t, chi, out), theta, true)
            .map_err(|e| Error::contract(Contract::EntropyIntegrable, e.to_string()))?;
        Ok((s, sx))
    }

    /// `U = ∫_0^θ c_V(v) v dv`.
    fn heat_content(&self, theta: f64, chi: &[f64]) -> Result<f64> {
        check_theta(theta)?;
        quad::integrate(|t| self.c_v(t, chi) * t, 0.0, theta, QUAD_TOL)
    }

    /// Whether `∫_0^1 c̃ μ / v^2` diverges, when known in closed form.
    fn lower_bound_divergence(&self) -> Option<bool> {
        None
    }

    /// True when `k` does not depend on the phase.
    fn conductivity_phase_free(&self) -> Option<bool> {
        None
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta < 0.0 || theta.is_nan() {
        Err(Error::Domain(format!("temperature must be nonnegative, got {theta}")))
    } else {
        Ok(())
    }
}

fn integrate_components<F>(d: usize, f: F, theta: f64, over_tau: bool) -> Result<Vec<f64>>
where
    F: Fn(f64, &mut [f64]),
{
    let mut out = Vec::with_capacity(d);
    for c in 0..d {
        let comp = |t: f64| {
            let mut buf = vec![0.0; d];
            f(t, &mut buf);
            buf[c]
        };
        let v = if over_tau {
            quad::integrate_from_zero(|t| if t > 0.0 { comp(t) / t } else { 0.0 }, theta, QUAD_TOL)?
        } else {
            quad::integrate(comp, 0.0, theta, QUAD_TOL)?
        };
        out.push(v);
    }
    Ok(out)
}

/// Parameters of the default two-phase model:
/// `c_V = (1 + c χ) θ^α / (1 + θ^α)`, `μ = μ0 (1 + θ)`,
/// `k = K1(θ) χ + K2(θ) (1 - χ)` clipped, `K_i = a_i + b_i θ / (1 + θ)`,
/// `λ = l1 χ + l2 χ^2 / 2`, `σ = s1 χ + s2 χ^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoPhasePower {
    pub alpha: f64,
    pub contrast: f64,
    pub mu0: f64,
    pub beta: f64,
    pub lambda: [f64; 2],
    pub sigma: [f64; 2],
    pub k_phase1: [f64; 2],
    pub k_phase0: [f64; 2],
    pub k_clip: [f64; 2],
}

impl Default for TwoPhasePower {
    fn default() -> Self {
        TwoPhasePower {
            alpha: 1.0,
            contrast: 0.5,
            mu0: 1.0,
            beta: 1.0,
            lambda: [0.0, 0.0],
            sigma: [0.0, 0.0],
            k_phase1: [1.0, 0.0],
            k_phase0: [1.0, 0.0],
            k_clip: [0.1, 10.0],
        }
    }
}

impl TwoPhasePower {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("exponent alpha must be >= 1, got {}", self.alpha)));
        }
        if !(self.mu0 > 0.0) {
            return Err(Error::Config(format!("mu0 must be positive, got {}", self.mu0)));
        }
        if !(self.beta > 0.0) {
            return Err(Error::contract(Contract::LatentWeightPositive, format!("beta = {}", self.beta)));
        }
        if !(self.k_clip[0] > 0.0 && self.k_clip[0] <= self.k_clip[1]) {
            return Err(Error::Config("conductivity clip must satisfy 0 < k0 <= k1".into()));
        }
        if !(self.contrast > -1.0) {
            return Err(Error::Config("contrast must exceed -1 so that c_V stays positive on [0, 1]".into()));
        }
        Ok(())
    }

    fn p(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        if self.alpha == 1.0 {
            t / (1.0 + t)
        } else {
            let ta = t.powf(self.alpha);
            if ta.is_infinite() {
                1.0
            } else {
                ta / (1.0 + ta)
            }
        }
    }

    /// `∫_0^θ p`.
    fn big_p(&self, t: f64) -> Result<f64> {
        if self.alpha == 1.0 {
            Ok(t - t.ln_1p())
        } else if self.alpha == 2.0 {
            Ok(t - t.atan())
        } else {
            quad::integrate(|v| self.p(v), 0.0, t, QUAD_TOL)
        }
    }

    /// `∫_0^θ p / τ = ln(1 + θ^α) / α`.
    fn big_s(&self, t: f64) -> f64 {
        if self.alpha == 1.0 {
            t.ln_1p()
        } else {
            t.powf(self.alpha).ln_1p() / self.alpha
        }
    }

    /// `∫_0^θ p v dv`.
    fn big_w(&self, t: f64) -> Result<f64> {
        if self.alpha == 1.0 {
            Ok(0.5 * t * t - t + t.ln_1p())
        } else if self.alpha == 2.0 {
            Ok(0.5 * t * t - 0.5 * (t * t).ln_1p())
        } else {
            quad::integrate(|v| self.p(v) * v, 0.0, t, QUAD_TOL)
        }
    }

    fn phase_k(&self, c: [f64; 2], t: f64) -> f64 {
        c[0] + c[1] * t / (1.0 + t)
    }

    pub fn has_closed_forms(&self) -> bool {
        self.alpha == 1.0 || self.alpha == 2.0
    }
}

impl Constitutive for TwoPhasePower {
    fn name(&self) -> &str {
        "two_phase_power"
    }
    fn components(&self) -> usize {
        1
    }
    fn c_v(&self, theta: f64, chi: &[f64]) -> f64 {
        (1.0 + self.contrast * chi[0]) * self.p(theta)
    }
    fn c_v_chi(&self, theta: f64, _chi: &[f64], out: &mut [f64]) {
        out[0] = self.contrast * self.p(theta);
    }
    fn lambda(&self, chi: &[f64]) -> f64 {
        self.lambda[0] * chi[0] + 0.5 * self.lambda[1] * chi[0] * chi[0]
    }
    fn lambda_grad(&self, chi: &[f64], out: &mut [f64]) {
        out[0] = self.lambda[0] + self.lambda[1] * chi[0];
    }
    fn sigma(&self, chi: &[f64]) -> f64 {
        self.sigma[0] * chi[0] + 0.5 * self.sigma[1] * chi[0] * chi[0]
    }
    fn sigma_grad(&self, chi: &[f64], out: &mut [f64]) {
        out[0] = self.sigma[0] + self.sigma[1] * chi[0];
    }
    fn beta(&self) -> f64 {
        self.beta
    }
    fn mu(&self, theta: f64) -> f64 {
        self.mu0 * (1.0 + theta)
    }
    fn conductivity(&self, theta: f64, chi: &[f64]) -> f64 {
        let t = theta.max(0.0);
        let k = self.phase_k(self.k_phase1, t) * chi[0] + self.phase_k(self.k_phase0, t) * (1.0 - chi[0]);
        k.clamp(self.k_clip[0], self.k_clip[1])
    }
    fn conductivity_bounds(&self) -> (f64, f64) {
        (self.k_clip[0], self.k_clip[1])
    }

    fn energy(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_theta(theta)?;
        let p = self.big_p(theta)?;
        Ok(((1.0 + self.contrast * chi[0]) * p, vec![self.contrast * p]))
    }

    fn entropy(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_theta(theta)?;
        let s = self.big_s(theta);
        Ok(((1.0 + self.contrast * chi[0]) * s, vec![self.contrast * s]))
    }

    fn heat_content(&self, theta: f64, chi: &[f64]) -> Result<f64> {
        check_theta(theta)?;
        Ok((1.0 + self.contrast * chi[0]) * self.big_w(theta)?)
    }

    fn lower_bound_divergence(&self) -> Option<bool> {
        // c̃ μ / v^2 ~ μ0 v^(α - 2) near 0.
        Some(self.alpha <= 1.0)
    }

    fn conductivity_phase_free(&self) -> Option<bool> {
        Some(self.k_phase1 == self.k_phase0)
    }
}

/// Test model whose phase gradient of `c_V` does not vanish as fast as
/// `c_V` at zero temperature: `c_V = p(θ)(1 + χ/2) + a χ sqrt(p(θ))`, `p = θ/(1+θ)`.
/// Only the quadrature paths of `Constitutive` are used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqrtPhaseFixture {
    pub weight: f64,
}

impl SqrtPhaseFixture {
    fn p(t: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else {
            t / (1.0 + t)
        }
    }
}

impl Constitutive for SqrtPhaseFixture {
    fn name(&self) -> &str {
        "sqrt_phase_fixture"
    }
    fn components(&self) -> usize {
        1
    }
    fn c_v(&self, theta: f64, chi: &[f64]) -> f64 {
        let p = Self::p(theta);
        p * (1.0 + 0.5 * chi[0]) + self.weight * chi[0] * p.sqrt()
    }
    fn c_v_chi(&self, theta: f64, _chi: &[f64], out: &mut [f64]) {
        let p = Self::p(theta);
        out[0] = 0.5 * p + self.weight * p.sqrt();
    }
    fn lambda(&self, _chi: &[f64]) -> f64 {
        0.0
    }
    fn lambda_grad(&self, _chi: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn sigma(&self, _chi: &[f64]) -> f64 {
        0.0
    }
    fn sigma_grad(&self, _chi: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
    }
    fn beta(&self) -> f64 {
        1.0
    }
    fn mu(&self, theta: f64) -> f64 {
        1.0 + theta
    }
    fn conductivity(&self, _theta: f64, _chi: &[f64]) -> f64 {
        1.0
    }
    fn conductivity_bounds(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
}

/// Constants computed from the model on a sample lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelBounds {
    pub c_bar: f64,
    pub c_low: f64,
    pub c1: f64,
    pub c_sigma: f64,
    pub c_lambda: f64,
    pub k0: f64,
    pub k1: f64,
    pub mu0: f64,
    pub l_mu: f64,
    pub beta: f64,
}

/// Validated model plus its lattice constants and the phase samples they were computed on.
#[derive(Debug, Clone)]
pub struct ThermoModel {
    inner: Arc<dyn Constitutive>,
    bounds: ModelBounds,
    chi_samples: Vec<Vec<f64>>,
    uniqueness: bool,
}

/// Temperature lattice: 0 and `10^(k/8)` for `k = -96..=64`.
pub fn theta_lattice() -> Vec<f64> {
    let mut v = vec![0.0];
    v.extend((-96..=64).map(|k| 10f64.powf(k as f64 / 8.0)));
    v
}

/// Quasi-random and vertex samples of the effective domain of `φ`.
pub fn domain_samples(potential: &ConvexPotential, count: usize) -> Vec<Vec<f64>> {
    let d = potential.dim();
    let mut out = Vec::new();
    match potential {
        ConvexPotential::IndicatorBox { lo, hi } => {
            if d == 1 {
                for i in 0..=count.max(2) {
                    let t = i as f64 / count.max(2) as f64;
                    out.push(vec![lo[0] + t * (hi[0] - lo[0])]);
                }
                return out;
            }
            for i in 0..count {
                let u = halton(i, d);
                out.push(lo.iter().zip(hi).zip(&u).map(|((l, h), t)| l + t * (h - l)).collect());
            }
            out.push(lo.clone());
            out.push(hi.clone());
        }
        ConvexPotential::IndicatorBall { radius, .. } => {
            for i in 0..count {
                let u = halton(i, d);
                let z: Vec<f64> = u.iter().map(|t| radius * (2.0 * t - 1.0)).collect();
                out.push(potential.prox(&z, 1.0).unwrap_or(z));
            }
            out.push(vec![0.0; d]);
        }
        ConvexPotential::IndicatorSimplex { .. } => {
            for i in 0..count {
                let u = halton(i, d);
                out.push(potential.prox(&u, 1.0).unwrap_or(u));
            }
            out.push(vec![0.0; d]);
            for i in 0..d {
                let mut e = vec![0.0; d];
                e[i] = 1.0;
                out.push(e);
            }
        }
        ConvexPotential::Gauge { body, profile } => {
            let cap = profile.f0().min(2.0) * 0.999;
            for i in 0..count {
                let u = halton(i, d + 1);
                let dir: Vec<f64> = u[..d].iter().map(|t| 2.0 * t - 1.0).collect();
                let m = body.gauge(&dir);
                if m == 0.0 {
                    continue;
                }
                out.push(dir.iter().map(|v| v * cap * u[d] / m).collect());
            }
            out.push(vec![0.0; d]);
        }
    }
    out
}

fn diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn vnorm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Ratio above which a supremum that keeps growing under lattice refinement is declared unbounded.
const GROWTH_FACTOR: f64 = 10.0;

impl ThermoModel {
    /// Computes the lattice constants and checks every existence contract;
    /// with `uniqueness` also the uniqueness contracts.
    pub fn new(inner: Arc<dyn Constitutive>, potential: &ConvexPotential, uniqueness: bool) -> Result<Self> {
        if inner.components() != potential.dim() {
            return Err(Error::Config(format!(
                "model has {} phase components but the potential acts on R^{}",
                inner.components(),
                potential.dim()
            )));
        }
        let chi_samples = domain_samples(potential, 64);
        let bounds = compute_bounds(inner.as_ref(), &chi_samples)?;
        let model = ThermoModel { inner, bounds, chi_samples, uniqueness };
        if uniqueness {
            model.check_uniqueness()?;
        }
        Ok(model)
    }

    pub fn two_phase(params: TwoPhasePower, potential: &ConvexPotential, uniqueness: bool) -> Result<Self> {
        params.validate()?;
        ThermoModel::new(Arc::new(params), potential, uniqueness)
    }

    pub fn inner(&self) -> &dyn Constitutive {
        self.inner.as_ref()
    }
    pub fn bounds(&self) -> &ModelBounds {
        &self.bounds
    }
    pub fn uniqueness(&self) -> bool {
        self.uniqueness
    }
    pub fn components(&self) -> usize {
        self.inner.components()
    }
    pub fn chi_samples(&self) -> &[Vec<f64>] {
        &self.chi_samples
    }

    pub fn c_v(&self, theta: f64, chi: &[f64]) -> f64 {
        self.inner.c_v(theta, chi)
    }

    pub fn energy_density(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.inner.energy(theta, chi)
    }

    pub fn entropy_density(&self, theta: f64, chi: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.inner.entropy(theta, chi)
    }

    pub fn heat_content(&self, theta: f64, chi: &[f64]) -> Result<f64> {
        self.inner.heat_content(theta, chi)
    }

    /// `s_χ` evaluated at `min(|θ|, ϱ)`.
    pub fn truncated_entropy_gradient(&self, theta: f64, chi: &[f64], rho: f64) -> Result<Vec<f64>> {
        Ok(self.inner.entropy(theta.abs().min(rho), chi)?.1)
    }

    /// `μ(min(|θ|, ϱ))`.
    pub fn truncated_mobility(&self, theta: f64, rho: f64) -> f64 {
        self.inner.mu(theta.abs().min(rho))
    }

    /// Odd extension of `e` in `θ`, used by the implicit energy step.
    pub fn energy_extended(&self, theta: f64, chi: &[f64]) -> Result<f64> {
        if theta >= 0.0 {
            Ok(self.inner.energy(theta, chi)?.0)
        } else {
            Ok(-self.inner.energy(-theta, chi)?.0)
        }
    }

    /// `ψ(w, χ)`: the `θ >= 0` with `e(θ, χ) = w`.
    pub fn inverse_temperature(&self, w: f64, chi: &[f64]) -> Result<f64> {
        if w < 0.0 || w.is_nan() {
            return Err(Error::Domain(format!("energy must be nonnegative, got {w}")));
        }
        if w == 0.0 {
            return Ok(0.0);
        }
        let e = |t: f64| self.inner.energy(t, chi).map(|v| v.0).unwrap_or(f64::NAN);
        let mut hi = 1.0;
        let mut tries = 0;
        while !(e(hi) >= w) {
            hi *= 2.0;
            tries += 1;
            if tries > 1100 || !hi.is_finite() {
                return Err(Error::numerical("inverse temperature", format!("no bracket for w = {w}"), w));
            }
        }
        let ftol = 4.0 * f64::EPSILON * w;
        quad::newton_bracketed(|t| (e(t) - w, self.inner.c_v(t, chi)), 0.0, hi, hi.min(w.max(1e-300)), ftol, 200)
            .map_err(|err| match err {
                Error::Numerical { residual, detail, .. } => Error::numerical("inverse temperature", detail, residual),
                other => other,
            })
    }

    /// `(F, E, S)` with `F = e - θ s + λ + B + (β + θ) φ + θ σ`,
    /// `E = e + λ + β φ + B`, `S = s - σ - φ`.
    pub fn densities(&self, potential: &ConvexPotential, theta: f64, chi: &[f64], b_value: f64) -> Result<(f64, f64, f64)> {
        let phi = potential.eval(chi);
        if !phi.is_finite() {
            return Err(Error::Domain(format!("phase {chi:?} outside the domain of the potential")));
        }
        let (e, _) = self.energy_density(theta, chi)?;
        let (s, _) = self.entropy_density(theta, chi)?;
        let lam = self.inner.lambda(chi);
        let sig = self.inner.sigma(chi);
        let beta = self.inner.beta();
        let big_e = e + lam + beta * phi + b_value;
        let big_s = s - sig - phi;
        let f = e - theta * s + lam + b_value + (beta + theta) * phi + theta * sig;
        Ok((f, big_e, big_s))
    }

    /// `c̃(θ) = min { c_V(v, χ) : χ ∈ dom φ, v >= θ }` over the lattice samples.
    pub fn c_tilde(&self, theta: f64) -> f64 {
        let mut m = f64::INFINITY;
        let mut v = theta;
        for _ in 0..60 {
            for chi in &self.chi_samples {
                m = m.min(self.inner.c_v(v, chi));
            }
            v *= 1.5;
        }
        m
    }

    /// `K(θ) = ∫_0^θ k̄`, requiring a phase-independent conductivity.
    pub fn kirchhoff(&self, theta: f64) -> Result<f64> {
        self.require_phase_free_k()?;
        let chi = &self.chi_samples[0];
        if theta >= 0.0 {
            quad::integrate(|s| self.inner.conductivity(s, chi), 0.0, theta, QUAD_TOL)
        } else {
            quad::integrate(|s| self.inner.conductivity(-s, chi), 0.0, -theta, QUAD_TOL).map(|v| -v)
        }
    }

    fn require_phase_free_k(&self) -> Result<()> {
        let free = match self.inner.conductivity_phase_free() {
            Some(f) => f,
            None => self.lattice_phase_free_k(),
        };
        if free {
            Ok(())
        } else {
            Err(Error::Mode("Kirchhoff transform needs a conductivity independent of the phase".into()))
        }
    }

    fn lattice_phase_free_k(&self) -> bool {
        theta_lattice().iter().all(|&t| {
            let k0 = self.inner.conductivity(t, &self.chi_samples[0]);
            self.chi_samples.iter().all(|c| (self.inner.conductivity(t, c) - k0).abs() <= 1e-14 * k0.abs().max(1.0))
        })
    }

    fn check_uniqueness(&self) -> Result<()> {
        if !self.lattice_phase_free_k() {
            return Err(Error::contract(Contract::ConductivityPhaseIndependent, "k varies with the phase on the lattice"));
        }
        let lat = theta_lattice();
        let mut prev = 0.0;
        for &t in lat.iter().skip(1) {
            let q = t * t / self.inner.mu(t);
            if q < prev * (1.0 - 1e-12) {
                return Err(Error::contract(Contract::MobilityMonotone, format!("v^2/mu(v) decreases at v = {t}")));
            }
            prev = q;
        }
        for &t in lat.iter().skip(1) {
            if !(self.c_tilde(t) > 0.0) {
                return Err(Error::contract(Contract::MinimalHeatCapacityPositive, format!("c~({t}) <= 0")));
            }
        }
        let diverges = match self.inner.lower_bound_divergence() {
            Some(v) => v,
            None => self.riemann_divergence_test(),
        };
        if !diverges {
            return Err(Error::contract(
                Contract::LowerBoundDivergence,
                "integral of c~ mu / v^2 converges at 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Lower Riemann sums of `c̃ μ / v^2` over dyadic shells `[2^-(j+1), 2^-j]`:
    /// the integral diverges when the shell contributions do not decay.
    pub fn riemann_divergence_test(&self) -> bool {
        let shell = |j: i32| {
            let a = 2f64.powi(-(j + 1));
            let b = 2f64.powi(-j);
            let m = 16;
            let mut acc = 0.0;
            for i in 0..m {
                let lo = a + (b - a) * i as f64 / m as f64;
                let hi = a + (b - a) * (i + 1) as f64 / m as f64;
                // c̃ and μ nondecreasing near 0 assumed only through the lower endpoint value over hi^2.
                let v = self.c_tilde(lo) * self.inner.mu(lo) / (hi * hi);
                acc += v * (hi - lo);
            }
            acc
        };
        let early = shell(10);
        let late = shell(40);
        early > 0.0 && late >= 1e-3 * early
    }
}

fn compute_bounds(m: &dyn Constitutive, chis: &[Vec<f64>]) -> Result<ModelBounds> {
    let d = m.components();
    let lat = theta_lattice();
    let mut c_bar: f64 = 0.0;
    let mut c_bar_coarse: f64 = 0.0;
    let mut c_low = f64::INFINITY;
    let mut ratio_fine: f64 = 0.0;
    let mut ratio_coarse: f64 = 0.0;
    let mut grad = vec![0.0; d];
    for chi in chis {
        let c0 = m.c_v(0.0, chi);
        if c0 != 0.0 {
            return Err(Error::contract(Contract::HeatCapacityVanishesAtZero, format!("c_V(0, {chi:?}) = {c0}")));
        }
        for &t in lat.iter().skip(1) {
            let c = m.c_v(t, chi);
            if !(c > 0.0) || !c.is_finite() {
                return Err(Error::contract(Contract::HeatCapacityBounded, format!("c_V({t}, {chi:?}) = {c}")));
            }
            c_bar = c_bar.max(c);
            if t <= 1e4 {
                c_bar_coarse = c_bar_coarse.max(c);
            }
            if t >= 1.0 {
                c_low = c_low.min(c);
            }
            m.c_v_chi(t, chi, &mut grad);
            let r = vnorm(&grad) / c;
            ratio_fine = ratio_fine.max(r);
            if t >= 1e-4 {
                ratio_coarse = ratio_coarse.max(r);
            }
        }
    }
    if c_bar > (1.0 + 1e-3) * c_bar_coarse.max(f64::MIN_POSITIVE) {
        return Err(Error::contract(
            Contract::HeatCapacityBounded,
            format!("c_V keeps growing with temperature ({c_bar_coarse} at 1e4, {c_bar} at 1e8)"),
        ));
    }
    if !(c_low > 0.0) {
        return Err(Error::contract(Contract::HeatCapacityLowerBound, format!("inf c_V on theta >= 1 is {c_low}")));
    }
    if ratio_fine > GROWTH_FACTOR * ratio_coarse.max(f64::MIN_POSITIVE) && ratio_fine > 1e-12 {
        return Err(Error::contract(
            Contract::HeatCapacityPhaseGradient,
            format!("|d_chi c_V| / c_V unbounded as theta -> 0 ({ratio_coarse} at 1e-4, {ratio_fine} at 1e-12)"),
        ));
    }
    let mut c1 = ratio_fine;
    // Lipschitz constant of (c_V)_χ in χ.
    let mut ga = vec![0.0; d];
    let mut gb = vec![0.0; d];
    for (i, a) in chis.iter().enumerate() {
        for b in chis.iter().skip(i + 1) {
            let dab = diff(a, b);
            if dab == 0.0 {
                continue;
            }
            for &t in lat.iter().step_by(4) {
                m.c_v_chi(t, a, &mut ga);
                m.c_v_chi(t, b, &mut gb);
                c1 = c1.max(diff(&ga, &gb) / dab);
            }
        }
    }
    // Entropy at unit temperature and Lipschitz continuity of s_χ.
    for chi in chis {
        let (s1, _) = m.entropy(1.0, chi)?;
        if !(s1 > 0.0) {
            return Err(Error::contract(Contract::EntropyAtUnitTemperature, format!("s(1, {chi:?}) = {s1}")));
        }
        c1 = c1.max(s1);
    }
    let lip_lat: Vec<f64> = lat.iter().cloned().filter(|t| *t <= 1e4).step_by(2).collect();
    let mut sx_prev: Option<(f64, Vec<f64>)> = None;
    for &t in &lip_lat {
        let (_, sx) = m.entropy(t, &chis[0])?;
        if let Some((tp, sp)) = &sx_prev {
            if t > *tp {
                c1 = c1.max(diff(&sx, sp) / (t - tp));
            }
        }
        sx_prev = Some((t, sx));
    }
    for (i, a) in chis.iter().enumerate().step_by(4) {
        for b in chis.iter().skip(i + 1).step_by(4) {
            let dab = diff(a, b);
            if dab == 0.0 {
                continue;
            }
            for &t in lip_lat.iter().step_by(4) {
                let (_, sa) = m.entropy(t, a)?;
                let (_, sb) = m.entropy(t, b)?;
                c1 = c1.max(diff(&sa, &sb) / dab);
            }
        }
    }
    if !c1.is_finite() {
        return Err(Error::contract(Contract::EntropyGradientLipschitz, "non-finite constant"));
    }
    let mut c_sigma: f64 = 0.0;
    let mut c_lambda: f64 = 0.0;
    for chi in chis {
        m.sigma_grad(chi, &mut grad);
        c_sigma = c_sigma.max(vnorm(&grad));
        m.lambda_grad(chi, &mut grad);
        c_lambda = c_lambda.max(vnorm(&grad));
    }
    let (k0, k1) = m.conductivity_bounds();
    if !(k0 > 0.0 && k0 <= k1) {
        return Err(Error::contract(Contract::ConductivityBounds, format!("declared bounds [{k0}, {k1}]")));
    }
    for chi in chis {
        for &t in &lat {
            let k = m.conductivity(t, chi);
            if !(k >= k0 && k <= k1) {
                return Err(Error::contract(Contract::ConductivityBounds, format!("k({t}, {chi:?}) = {k}")));
            }
        }
    }
    let mut mu0 = f64::INFINITY;
    let mut l_mu: f64 = 0.0;
    let mut q_max: f64 = 0.0;
    let mut prev: Option<(f64, f64)> = None;
    for &t in &lat {
        let mu = m.mu(t);
        if !(mu > 0.0) {
            return Err(Error::contract(Contract::MobilityStructure, format!("mu({t}) = {mu}")));
        }
        let q = (1.0 + t) / mu;
        mu0 = mu0.min(1.0 / q);
        q_max = q_max.max(q);
        if let Some((tp, qp)) = prev {
            l_mu = l_mu.max((q - qp).abs() / (t - tp));
        }
        prev = Some((t, q));
    }
    if !(mu0 > 0.0) || !q_max.is_finite() {
        return Err(Error::contract(Contract::MobilityStructure, "mu >= mu0 (1 + theta) fails for every mu0 > 0"));
    }
    if !l_mu.is_finite() {
        return Err(Error::contract(Contract::MobilityLipschitz, "(1 + theta)/mu not Lipschitz"));
    }
    let beta = m.beta();
    if !(beta > 0.0) {
        return Err(Error::contract(Contract::LatentWeightPositive, format!("beta = {beta}")));
    }
    Ok(ModelBounds { c_bar, c_low, c1, c_sigma, c_lambda, k0, k1, mu0, l_mu, beta })
}

/// Scalar GENERIC coefficients for the phase block.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericCoefficients {
    pub m11: f64,
    pub m12: Vec<f64>,
    pub m22: f64,
}

/// `m11 = θ |DχE|^2 / (μ c_V^2)`, `m12 = -θ DχE / (μ c_V)`, `m22 = θ / μ`.
pub fn generic_coefficients(theta: f64, mu: f64, c_v: f64, dchi_e: &[f64]) -> Result<GenericCoefficients> {
    if !(theta > 0.0 && mu > 0.0 && c_v > 0.0) {
        return Err(Error::Domain(format!("need theta, mu, c_V > 0, got {theta}, {mu}, {c_v}")));
    }
    let d2: f64 = dchi_e.iter().map(|v| v * v).sum();
    Ok(GenericCoefficients {
        m11: theta * d2 / (mu * c_v * c_v),
        m12: dchi_e.iter().map(|v| -theta * v / (mu * c_v)).collect(),
        m22: theta / mu,
    })
}

/// Root-finding oracle for `ψ` independent of the Newton path, used in tests.
pub fn inverse_by_bisection(model: &ThermoModel, w: f64, chi: &[f64]) -> Result<f64> {
    let mut hi = 1.0;
    while model.energy_density(hi, chi)?.0 < w {
        hi *= 2.0;
    }
    quad::bisect(|t| model.energy_density(t, chi).map(|v| v.0).unwrap_or(f64::NAN) - w, 0.0, hi, 1e-16)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> ConvexPotential {
        ConvexPotential::IndicatorBox { lo: vec![0.0], hi: vec![1.0] }
    }

    #[test]
    fn closed_form_spot_values() {
        let m = ThermoModel::two_phase(TwoPhasePower::default(), &unit_box(), false).unwrap();
        let ln2 = 2f64.ln();
        assert!((m.energy_density(1.0, &[0.0]).unwrap().0 - (1.0 - ln2)).abs() < 1e-15);
        assert!((m.entropy_density(1.0, &[0.0]).unwrap().0 - ln2).abs() < 1e-15);
        assert!((m.heat_content(1.0, &[0.0]).unwrap() - (ln2 - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn bounds_of_default_model() {
        let m = ThermoModel::two_phase(TwoPhasePower::default(), &unit_box(), false).unwrap();
        let b = m.bounds();
        assert!((b.c_low - 0.5).abs() < 1e-12);
        assert!(b.c_bar > 1.49 && b.c_bar <= 1.5);
        assert!((b.mu0 - 1.0).abs() < 1e-12);
        assert!(b.c1 >= 0.5);
    }

    #[test]
    fn truncated_mobility_rule() {
        let m = ThermoModel::two_phase(TwoPhasePower::default(), &unit_box(), false).unwrap();
        assert_eq!(m.truncated_mobility(9.0, 5.0), 6.0);
        assert_eq!(m.truncated_mobility(-3.0, 5.0), m.truncated_mobility(3.0, 5.0));
    }

    #[test]
    fn generic_example() {
        let g = generic_coefficients(1.0, 1.0, 1.0, &[2.0]).unwrap();
        assert_eq!((g.m11, g.m12[0], g.m22), (4.0, -2.0, 1.0));
        assert!(generic_coefficients(0.0, 1.0, 1.0, &[2.0]).is_err());
    }

    #[test]
    fn phase_gradient_violation_named() {
        let err = ThermoModel::new(Arc::new(SqrtPhaseFixture { weight: 0.1 }), &unit_box(), false).unwrap_err();
        assert!(matches!(err, Error::ModelContract { contract: Contract::HeatCapacityPhaseGradient, .. }), "{err}");
    }

    #[test]
    fn negative_temperature_rejected() {
        let m = ThermoModel::two_phase(TwoPhasePower::default(), &unit_box(), false).unwrap();
        assert!(matches!(m.energy_density(-1.0, &[0.0]), Err(Error::Domain(_))));
    }
}
