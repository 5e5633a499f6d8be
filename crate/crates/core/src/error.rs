use std::fmt;

/// Named model contracts checked by the validators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Contract {
    HeatCapacityVanishesAtZero,
    HeatCapacityBounded,
    HeatCapacityLowerBound,
    HeatCapacityPhaseGradient,
    EntropyAtUnitTemperature,
    EntropyGradientLipschitz,
    EntropyIntegrable,
    ConductivityBounds,
    MobilityStructure,
    MobilityLipschitz,
    ConductivityPhaseIndependent,
    MobilityMonotone,
    LowerBoundDivergence,
    MinimalHeatCapacityPositive,
    KernelSymmetry,
    InteractionEven,
    LowerBoundPositivity,
    LatentWeightPositive,
}

impl fmt::Display for Contract {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Contract::HeatCapacityVanishesAtZero => "c_V(0, chi) = 0",
            Contract::HeatCapacityBounded => "0 < c_V <= c_bar",
            Contract::HeatCapacityLowerBound => "c_V >= c_low for theta >= 1",
            Contract::HeatCapacityPhaseGradient => "|d_chi c_V| <= c1 c_V",
            Contract::EntropyAtUnitTemperature => "0 < s(1, chi) <= c1",
            Contract::EntropyGradientLipschitz => "s_chi Lipschitz",
            Contract::EntropyIntegrable => "c_V / theta integrable at 0",
            Contract::ConductivityBounds => "k0 <= k <= k1",
            Contract::MobilityStructure => "mu(theta) >= mu0 (1 + theta)",
            Contract::MobilityLipschitz => "(1 + theta) / mu bounded and Lipschitz",
            Contract::ConductivityPhaseIndependent => "k independent of chi",
            Contract::MobilityMonotone => "v^2 / mu(v) nondecreasing",
            Contract::LowerBoundDivergence => "integral of c~ mu / v^2 diverges at 0",
            Contract::MinimalHeatCapacityPositive => "c~(theta) > 0 for theta > 0",
            Contract::KernelSymmetry => "kappa symmetric",
            Contract::InteractionEven => "G even",
            Contract::LowerBoundPositivity => "lower comparison solution positive",
            Contract::LatentWeightPositive => "beta > 0",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model contract violated [{contract}]: {detail}")]
    ModelContract { contract: Contract, detail: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("numerical failure in {context}: {detail} (residual {residual:.3e})")]
    Numerical {
        context: &'static str,
        detail: String,
        residual: f64,
    },
    #[error("not implemented: {0}")]
    NotImplemented(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("mode error: {0}")]
    Mode(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("positivity violated: {0}")]
    Positivity(String),
    #[error("format error in {file}: {detail}")]
    Format { file: String, detail: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn numerical(context: &'static str, detail: impl Into<String>, residual: f64) -> Self {
        Error::Numerical {
            context,
            detail: detail.into(),
            residual,
        }
    }

    pub fn contract(contract: Contract, detail: impl Into<String>) -> Self {
        Error::ModelContract {
            contract,
            detail: detail.into(),
        }
    }

    /// True for failures caused by bad input rather than by the numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::ModelContract { .. }
                | Error::Domain(_)
                | Error::NotImplemented(_)
                | Error::Usage(_)
                | Error::Mode(_)
                | Error::Precondition(_)
                | Error::Format { .. }
                | Error::Io { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
