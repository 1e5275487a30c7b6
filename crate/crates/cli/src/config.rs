//! TOML experiment configuration: file values with flag overrides.

use std::path::Path;

use mh_core::cohort::LevelSet;
use mh_core::design::{DesignKind, DesignSpec};
use mh_core::estimator::{CWeights, EstimateOptions, VarianceMethod};
use mh_core::montecarlo::ScenarioSpec;
use mh_core::population::PopulationModel;
use serde::{Deserialize, Serialize};

#[derive(Debug)]
pub enum ConfigError {
    Io(std::io::Error),
    Parse(String),
    Schema(String),
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConfigError::Io(e) => write!(f, "config: {}", e),
            ConfigError::Parse(e) => write!(f, "config parse: {}", e),
            ConfigError::Schema(e) => write!(f, "config schema: {}", e),
        }
    }
}

fn default_levels() -> Vec<f64> {
    vec![0.0, 1.0]
}

fn default_lambda0() -> f64 {
    1.0
}

/// Design block of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignConfig {
    /// "full_cohort" | "srs" | "matching" | "counter_matching"
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_per_stratum: Option<Vec<usize>>,
    #[serde(default)]
    pub clamp: bool,
}

impl DesignConfig {
    pub fn to_spec(&self) -> Result<DesignSpec, ConfigError> {
        let kind = match self.kind.as_str() {
            "full_cohort" => DesignKind::FullCohort,
            "srs" => DesignKind::Srs {
                m: self.m.ok_or_else(|| ConfigError::Schema("srs needs m".into()))?,
            },
            "matching" => DesignKind::Matching {
                m: self
                    .m_per_stratum
                    .clone()
                    .ok_or_else(|| ConfigError::Schema("matching needs m_per_stratum".into()))?,
            },
            "counter_matching" => DesignKind::CounterMatching {
                m: self
                    .m_per_stratum
                    .clone()
                    .ok_or_else(|| ConfigError::Schema("counter_matching needs m_per_stratum".into()))?,
            },
            other => return Err(ConfigError::Schema(format!("unknown design kind {:?}", other))),
        };
        let spec = DesignSpec::new(kind).map_err(|e| ConfigError::Schema(e.to_string()))?;
        Ok(spec.with_clamp(self.clamp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    /// "equal" or "optimal"; explicit weights go in `c_custom`.
    #[serde(default = "default_c")]
    pub c: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_custom: Option<Vec<f64>>,
    /// "optional" or "model".
    #[serde(default = "default_variance")]
    pub variance: String,
}

fn default_c() -> String {
    "equal".into()
}

fn default_variance() -> String {
    "optional".into()
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self { c: default_c(), c_custom: None, variance: default_variance() }
    }
}

impl EstimatorConfig {
    pub fn to_options(&self) -> Result<EstimateOptions, ConfigError> {
        let c = match (self.c.as_str(), &self.c_custom) {
            (_, Some(values)) => CWeights::Custom(values.clone()),
            ("equal", None) => CWeights::Equal,
            ("optimal", None) => CWeights::Optimal,
            (other, None) => {
                return Err(ConfigError::Schema(format!("unknown c weights {:?}", other)))
            }
        };
        let variance = match self.variance.as_str() {
            "optional" => VarianceMethod::Optional,
            "model" => VarianceMethod::Model,
            other => {
                return Err(ConfigError::Schema(format!("unknown variance method {:?}", other)))
            }
        };
        Ok(EstimateOptions { c, variance, solve: Default::default() })
    }
}

/// One experiment: cohort size, truth, population cells, design, estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: usize,
    pub phi0: f64,
    pub tau: f64,
    #[serde(default = "default_lambda0")]
    pub lambda0: f64,
    #[serde(default = "default_levels")]
    pub levels: Vec<f64>,
    /// Level frequencies; either `f` or both `q` and `f_within`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_within: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub censor_uniform_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub design: DesignConfig,
    #[serde(default)]
    pub estimator: EstimatorConfig,
    #[serde(default)]
    pub compute_baseline: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(ConfigError::Io)?;
        Self::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if self.f.is_none() && (self.q.is_none() || self.f_within.is_none()) {
            return Err(ConfigError::Schema(
                "population needs either `f` or both `q` and `f_within`".into(),
            ));
        }
        Ok(())
    }

    pub fn levels(&self) -> Result<LevelSet, ConfigError> {
        LevelSet::new(self.levels.clone()).map_err(|e| ConfigError::Schema(e.to_string()))
    }

    pub fn population(&self) -> Result<PopulationModel<f64>, ConfigError> {
        let pop = match (&self.q, &self.f_within) {
            (Some(q), Some(fw)) => PopulationModel::time_constant_strata(
                1.0,
                q.clone(),
                fw.clone(),
                self.lambda0,
                self.tau,
            ),
            _ => PopulationModel::time_constant(
                1.0,
                self.f.clone().expect("validated"),
                self.lambda0,
                self.tau,
            ),
        };
        pop.map_err(|e| ConfigError::Schema(e.to_string()))
    }

    /// Into a Monte Carlo scenario; `seed` and `reps` must be present.
    pub fn to_scenario(&self) -> Result<ScenarioSpec, ConfigError> {
        let seed = self.seed.ok_or_else(|| ConfigError::Schema("mc needs a seed".into()))?;
        let reps = self.reps.ok_or_else(|| ConfigError::Schema("mc needs reps".into()))?;
        let scenario = ScenarioSpec {
            n: self.n,
            phi0: self.phi0,
            levels: self.levels()?,
            population: self.population()?,
            censor_uniform_max: self.censor_uniform_max,
            design: self.design.to_spec()?,
            reps,
            seed,
            options: self.estimator.to_options()?,
            compute_baseline: self.compute_baseline,
        };
        scenario.validate().map_err(|e| ConfigError::Schema(e.to_string()))?;
        Ok(scenario)
    }
}
