//! TOML run configuration and its translation into a `System`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::convex::{ConvexPotential, GaugeBody, Profile};
use crate::diagnostics::calibrate_rho;
use crate::error::{Error, Result};
use crate::grid::{BoundaryData, Grid};
use crate::nonlocal::{Interaction, KernelSpec, NonlocalOperator};
use crate::solver::{LagMode, SolverConfig, State, System};
use crate::thermo::{SqrtPhaseFixture, ThermoModel, TwoPhasePower};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSection,
    #[serde(default)]
    pub thermo: ThermoSection,
    #[serde(default)]
    pub potential: PotentialSection,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    pub init: InitSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dim: usize,
    pub lengths: Vec<f64>,
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermoSection {
    /// `two_phase_power` or `sqrt_phase_fixture`.
    pub model: String,
    pub alpha: f64,
    pub contrast: f64,
    pub mu0: f64,
    pub beta: f64,
    pub lambda: [f64; 2],
    pub sigma: [f64; 2],
    pub k_phase1: [f64; 2],
    pub k_phase0: [f64; 2],
    pub k_clip: [f64; 2],
    pub uniqueness: bool,
}

impl Default for ThermoSection {
    fn default() -> Self {
        let p = TwoPhasePower::default();
        ThermoSection {
            model: "two_phase_power".into(),
            alpha: p.alpha,
            contrast: p.contrast,
            mu0: p.mu0,
            beta: p.beta,
            lambda: p.lambda,
            sigma: p.sigma,
            k_phase1: p.k_phase1,
            k_phase0: p.k_phase0,
            k_clip: p.k_clip,
            uniqueness: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSection {
    /// `box`, `ball`, `simplex` or `gauge`.
    pub kind: String,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub radius: f64,
    pub dim: usize,
    /// Gauge body: `ball` or `box`.
    pub body: String,
    pub half_widths: Vec<f64>,
    /// Gauge profile: `quadratic`, `power` or `log_barrier`.
    pub profile: String,
    pub power: f64,
}

impl Default for PotentialSection {
    fn default() -> Self {
        PotentialSection {
            kind: "box".into(),
            lo: vec![0.0],
            hi: vec![1.0],
            radius: 1.0,
            dim: 1,
            body: "ball".into(),
            half_widths: vec![],
            profile: "quadratic".into(),
            power: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelSection {
    /// `none`, `constant`, `gaussian` or `tophat`.
    pub kind: String,
    pub amplitude: f64,
    pub width: f64,
    pub n: f64,
    /// `quadratic` or `quartic`.
    pub interaction: String,
    pub a2: f64,
    pub a4: f64,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection {
            kind: "none".into(),
            amplitude: 0.0,
            width: 0.2,
            n: 4.0,
            interaction: "quadratic".into(),
            a2: 1.0,
            a4: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySection {
    pub gamma: f64,
    pub theta_gamma: f64,
    /// Relative growth rate of the external temperature.
    pub ramp: f64,
}

impl Default for BoundarySection {
    fn default() -> Self {
        BoundarySection { gamma: 0.0, theta_gamma: 1.0, ramp: 0.0 }
    }
}

/// Scalar profile over the domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldProfile {
    /// `constant`, `ramp`, `cosine` or `bump`.
    pub kind: String,
    pub base: f64,
    pub amplitude: f64,
    pub axis: usize,
    pub center: Vec<f64>,
    pub width: f64,
}

impl Default for FieldProfile {
    fn default() -> Self {
        FieldProfile { kind: "constant".into(), base: 1.0, amplitude: 0.0, axis: 0, center: vec![], width: 0.1 }
    }
}

impl FieldProfile {
    pub fn constant(base: f64) -> Self {
        FieldProfile { base, ..Default::default() }
    }

    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        let dim = grid.dim();
        if self.axis >= dim {
            return Err(Error::Config(format!("profile axis {} out of range for a {dim}-d grid", self.axis)));
        }
        let len = grid.lengths()[self.axis];
        let center: Vec<f64> = if self.center.is_empty() {
            grid.lengths().iter().map(|l| 0.5 * l).collect()
        } else if self.center.len() == dim {
            self.center.clone()
        } else {
            return Err(Error::Config(format!("bump center needs {dim} coordinates")));
        };
        let f = |c: &[f64; 2]| -> Result<f64> {
            let x = c[self.axis];
            Ok(match self.kind.as_str() {
                "constant" => self.base,
                "ramp" => self.base + self.amplitude * x / len,
                "cosine" => self.base + self.amplitude * (std::f64::consts::PI * x / len).cos(),
                "bump" => {
                    let r2: f64 = (0..dim).map(|k| (c[k] - center[k]).powi(2)).sum();
                    self.base + self.amplitude * (-r2 / (self.width * self.width)).exp()
                }
                other => return Err(Error::Config(format!("unknown profile kind '{other}'"))),
            })
        };
        grid.centers().iter().map(f).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub theta: FieldProfile,
    /// One profile per phase component.
    pub chi: Vec<FieldProfile>,
}

/// Truncation: a number, or `"auto"` to calibrate from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RhoSetting {
    Value(f64),
    Keyword(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub dt: f64,
    pub horizon: f64,
    pub n_reg: f64,
    pub rho: RhoSetting,
    /// `previous_step` or `interval_average`.
    pub lag: String,
    pub lag_interval: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        SolverSection {
            dt: s.dt,
            horizon: s.horizon,
            n_reg: s.n_reg,
            rho: RhoSetting::Keyword("auto".into()),
            lag: "previous_step".into(),
            lag_interval: 1,
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    pub cadence: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: None, cadence: 1 }
    }
}

/// A configuration turned into solver inputs.
#[derive(Debug, Clone)]
pub struct Built {
    pub system: System,
    pub init: State,
    pub solver: SolverConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::build(self.grid.dim, &self.grid.lengths, &self.grid.cells)
    }

    pub fn potential(&self) -> Result<ConvexPotential> {
        let p = &self.potential;
        let pot = match p.kind.as_str() {
            "box" => {
                if p.lo.len() != p.hi.len() {
                    return Err(Error::Config("box bounds lo and hi differ in length".into()));
                }
                ConvexPotential::IndicatorBox { lo: p.lo.clone(), hi: p.hi.clone() }
            }
            "ball" => ConvexPotential::IndicatorBall { radius: p.radius, dim: p.dim },
            "simplex" => ConvexPotential::IndicatorSimplex { dim: p.dim },
            "gauge" => {
                let body = match p.body.as_str() {
                    "ball" => GaugeBody::Ball { radius: p.radius, dim: p.dim },
                    "box" => GaugeBody::Box { half_widths: p.half_widths.clone() },
                    other => return Err(Error::Config(format!("unknown gauge body '{other}'"))),
                };
                let profile = match p.profile.as_str() {
                    "quadratic" => Profile::Quadratic,
                    "power" => Profile::Power { p: p.power },
                    "log_barrier" => Profile::LogBarrier,
                    other => return Err(Error::Config(format!("unknown gauge profile '{other}'"))),
                };
                ConvexPotential::Gauge { body, profile }
            }
            other => return Err(Error::Config(format!("unknown potential kind '{other}'"))),
        };
        pot.validate()?;
        Ok(pot)
    }

    pub fn model(&self, potential: &ConvexPotential) -> Result<ThermoModel> {
        let t = &self.thermo;
        match t.model.as_str() {
            "two_phase_power" => {
                let params = TwoPhasePower {
                    alpha: t.alpha,
                    contrast: t.contrast,
                    mu0: t.mu0,
                    beta: t.beta,
                    lambda: t.lambda,
                    sigma: t.sigma,
                    k_phase1: t.k_phase1,
                    k_phase0: t.k_phase0,
                    k_clip: t.k_clip,
                };
                ThermoModel::two_phase(params, potential, t.uniqueness)
            }
            "sqrt_phase_fixture" => ThermoModel::new(Arc::new(SqrtPhaseFixture { weight: 0.1 }), potential, t.uniqueness),
            other => Err(Error::Config(format!("unknown thermo model '{other}'"))),
        }
    }

    pub fn kernel(&self, grid: &Grid, d: usize) -> Result<NonlocalOperator> {
        let k = &self.kernel;
        let interaction = match k.interaction.as_str() {
            "quadratic" => Interaction::Quadratic,
            "quartic" => Interaction::EvenQuartic { a2: k.a2, a4: k.a4 },
            other => return Err(Error::Config(format!("unknown interaction '{other}'"))),
        };
        let spec = match k.kind.as_str() {
            "none" => KernelSpec::Constant { amplitude: 0.0 },
            "constant" => KernelSpec::Constant { amplitude: k.amplitude },
            "gaussian" => KernelSpec::Gaussian { amplitude: k.amplitude, width: k.width },
            "tophat" => KernelSpec::TopHat { amplitude: k.amplitude, n: k.n },
            other => return Err(Error::Config(format!("unknown kernel kind '{other}'"))),
        };
        NonlocalOperator::build(grid, &spec, interaction, d)
    }

    pub fn lag(&self) -> Result<LagMode> {
        match self.solver.lag.as_str() {
            "previous_step" => Ok(LagMode::PreviousStep),
            "interval_average" => Ok(LagMode::IntervalAverage(self.solver.lag_interval)),
            other => Err(Error::Config(format!("unknown lag mode '{other}'"))),
        }
    }

    /// Resolves the truncation; `"auto"` calibrates with `C* = max(sup θ0, sup θ_Γ)`.
    pub fn resolve_rho(&self, init_theta: &[f64]) -> Result<f64> {
        match &self.solver.rho {
            RhoSetting::Value(v) => Ok(*v),
            RhoSetting::Keyword(k) if k == "auto" => {
                let b = &self.boundary;
                let tg = b.theta_gamma * (1.0 + b.ramp * self.solver.horizon).max(1.0);
                let v0 = init_theta.iter().cloned().fold(tg, f64::max);
                calibrate_rho(v0, self.grid.dim)
            }
            RhoSetting::Keyword(k) => Err(Error::Config(format!("truncation must be a number or \"auto\", got '{k}'"))),
        }
    }

    /// Validates every section and assembles the solver inputs.
    pub fn build(&self) -> Result<Built> {
        let grid = self.grid()?;
        let potential = self.potential()?;
        let d = potential.dim();
        let model = self.model(&potential)?;
        let kernel = self.kernel(&grid, d)?;
        let b = &self.boundary;
        let mut boundary = BoundaryData::uniform(&grid, b.gamma, b.theta_gamma);
        boundary.ramp = b.ramp;
        let system = System::new(grid.clone(), model, potential, kernel, boundary)?;

        if self.init.chi.len() != d {
            return Err(Error::Config(format!("init.chi needs {d} profiles, got {}", self.init.chi.len())));
        }
        let theta = self.init.theta.sample(&grid)?;
        let comps: Vec<Vec<f64>> = self.init.chi.iter().map(|p| p.sample(&grid)).collect::<Result<_>>()?;
        let mut chi = vec![0.0; grid.len() * d];
        for (c, comp) in comps.iter().enumerate() {
            for (i, v) in comp.iter().enumerate() {
                chi[i * d + c] = *v;
            }
        }
        let rho = self.resolve_rho(&theta)?;
        let s = &self.solver;
        let solver = SolverConfig {
            dt: s.dt,
            horizon: s.horizon,
            n_reg: s.n_reg,
            rho,
            lag: self.lag()?,
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            cadence: self.output.cadence,
        };
        solver.validate()?;
        system.boundary.validate(&system.grid, solver.horizon)?;
        let init = State::new(theta, chi);
        crate::solver::check_initial(&system, &init)?;
        Ok(Built { system, init, solver })
    }

    /// Copy with the truncation fixed to `rho` and no output directory.
    pub fn resolved(&self, rho: f64) -> Self {
        let mut c = self.clone();
        c.solver.rho = RhoSetting::Value(rho);
        c.output.dir = None;
        c
    }
}

/// Helper for tests and examples: a 1-d box-potential configuration.
pub fn default_1d(cells: usize) -> RunConfig {
    RunConfig {
        grid: GridSection { dim: 1, lengths: vec![1.0], cells: vec![cells] },
        thermo: ThermoSection::default(),
        potential: PotentialSection::default(),
        kernel: KernelSection::default(),
        boundary: BoundarySection::default(),
        init: InitSection { theta: FieldProfile::constant(1.0), chi: vec![FieldProfile::constant(0.5)] },
        solver: SolverSection::default(),
        output: OutputSection::default(),
        seed: 0,
    }
}
