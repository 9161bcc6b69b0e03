//! Experiment configuration: a TOML file fully describes a run, and the
//! parsed form round-trips losslessly so artifacts can embed their own
//! config snapshot.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluctuation::TestFunction;
use crate::potentials::{Potential, Shape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentTag {
    Thermo,
    Ensembles,
    Dynamics,
    Scaling,
    Bg,
    Sbe,
    Compare,
}

impl ExperimentTag {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "thermo" => Ok(ExperimentTag::Thermo),
            "ensembles" => Ok(ExperimentTag::Ensembles),
            "dynamics" => Ok(ExperimentTag::Dynamics),
            "scaling" => Ok(ExperimentTag::Scaling),
            "bg" => Ok(ExperimentTag::Bg),
            "sbe" => Ok(ExperimentTag::Sbe),
            "compare" => Ok(ExperimentTag::Compare),
            other => Err(Error::usage(format!("unknown experiment '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ExperimentTag::Thermo => "thermo",
            ExperimentTag::Ensembles => "ensembles",
            ExperimentTag::Dynamics => "dynamics",
            ExperimentTag::Scaling => "scaling",
            ExperimentTag::Bg => "bg",
            ExperimentTag::Sbe => "sbe",
            ExperimentTag::Compare => "compare",
        }
    }
}

/// Serializable description of a built-in potential.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PotentialSpec {
    Quadratic {
        a: f64,
    },
    Perturbed {
        a: f64,
        b: f64,
        shape: Shape,
    },
}

impl PotentialSpec {
    pub fn build(&self) -> Potential {
        match *self {
            PotentialSpec::Quadratic { a } => Potential::quadratic(a),
            PotentialSpec::Perturbed { a, b, shape } => Potential::perturbed(a, b, shape),
        }
    }
}

/// Serializable description of a test function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TestFunctionSpec {
    Bump { center: f64, width: f64 },
    Hermite { order: usize, center: f64, width: f64 },
}

impl TestFunctionSpec {
    pub fn build(&self) -> Result<TestFunction> {
        match *self {
            TestFunctionSpec::Bump { center, width } => {
                if width <= 0.0 {
                    return Err(Error::config("test-function width must be positive"));
                }
                Ok(TestFunction::bump(center, width))
            }
            TestFunctionSpec::Hermite {
                order,
                center,
                width,
            } => {
                if width <= 0.0 {
                    return Err(Error::config("test-function width must be positive"));
                }
                TestFunction::hermite_fn(order, center, width)
            }
        }
    }

    pub fn id(&self) -> String {
        match *self {
            TestFunctionSpec::Bump { center, width } => format!("bump({center};{width})"),
            TestFunctionSpec::Hermite {
                order,
                center,
                width,
            } => format!("hermite{order}({center};{width})"),
        }
    }
}

/// Extra parameters for SBE runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbeSpec {
    pub l: f64,
    pub k_max: usize,
    pub dt: f64,
    /// Burn-in horizon before measuring.
    pub t_burn: f64,
}

fn default_record_every() -> usize {
    64
}

fn default_true() -> bool {
    true
}

fn default_lambda_grid() -> Vec<f64> {
    vec![-1.0, 0.0, 0.5, 2.0]
}

/// Full experiment description; every field lands in the artifact snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentTag,
    pub potential: PotentialSpec,
    pub lambda0: f64,
    /// Scaling parameters n (ascending) for scaling/bg/compare, or lattice
    /// sizes N for ensembles/dynamics.
    #[serde(default)]
    pub n: Vec<usize>,
    /// Macroscopic time horizon.
    pub t: f64,
    /// Microscopic step size.
    pub dt: f64,
    pub replicas: usize,
    pub master_seed: u64,
    pub out_dir: String,
    #[serde(default)]
    pub test_function: Option<TestFunctionSpec>,
    /// Corrector / nonlinearity mollification scale.
    #[serde(default)]
    pub delta: Option<f64>,
    /// Probe windows for the Russo–Vallois quadratic variation of A.
    #[serde(default)]
    pub qv_deltas: Vec<f64>,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Asymmetry for dynamics diagnostics (scaling runs use n^{-1/2}).
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Step count for the conservation/noise phase of dynamics runs;
    /// defaults to t/dt.
    #[serde(default)]
    pub conservation_steps: Option<usize>,
    /// Whether dynamics runs include the stationarity phase.
    #[serde(default = "default_true")]
    pub stationarity: bool,
    #[serde(default)]
    pub sbe: Option<SbeSpec>,
    #[serde(default = "default_lambda_grid")]
    pub lambda_grid: Vec<f64>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !(self.dt > 0.0) {
            return Err(Error::config("t and dt must be positive"));
        }
        if self.replicas == 0 {
            return Err(Error::config("replicas must be at least 1"));
        }
        if self.n.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("n list must be strictly ascending"));
        }
        if let Some(d) = self.delta {
            if d <= 0.0 {
                return Err(Error::config("delta must be positive"));
            }
        }
        match self.experiment {
            ExperimentTag::Scaling | ExperimentTag::Bg | ExperimentTag::Compare => {
                if self.n.is_empty() {
                    return Err(Error::config("scaling experiments need an n list"));
                }
                if self.test_function.is_none() {
                    return Err(Error::config("scaling experiments need a test function"));
                }
                if self.delta.is_none() {
                    return Err(Error::config("scaling experiments need delta"));
                }
            }
            ExperimentTag::Ensembles | ExperimentTag::Dynamics => {
                if self.n.is_empty() {
                    return Err(Error::config("lattice experiments need an n list"));
                }
            }
            ExperimentTag::Sbe => {
                if self.sbe.is_none() {
                    return Err(Error::config("sbe experiment needs an [sbe] section"));
                }
            }
            ExperimentTag::Thermo => {
                if self.lambda_grid.is_empty() {
                    return Err(Error::config("thermo experiment needs a lambda grid"));
                }
            }
        }
        Ok(())
    }
}
