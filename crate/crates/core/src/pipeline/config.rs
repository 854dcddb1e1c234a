//! TOML run configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{McmcConfig, ParamPrior, PredictiveOptions, PriorSettings};
use crate::dataset::SyntheticSpec;
use crate::discovery::GpConfig;
use crate::error::ConfigError;
use crate::prior::{Mode, PriorError, PriorModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds every random stage. Required.
    pub seed: u64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    /// Records with normalized time `≤ split` train the models.
    #[serde(default = "default_split")]
    pub split: f64,
    /// Min–max normalize T, H and y with training statistics.
    #[serde(default = "yes")]
    pub normalize: bool,
    /// Evaluate on the rayon pool. Results are identical either way.
    #[serde(default = "yes")]
    pub parallel: bool,
    /// Default output directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub data: DataSource,
    #[serde(default)]
    pub prior: PriorConfig,
    /// `seed` and `parallel` here are replaced by the top-level values.
    #[serde(default)]
    pub discovery: GpConfig,
    /// Candidate index used instead of the rank-1 candidate.
    #[serde(default)]
    pub pin_candidate: Option<usize>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
    #[serde(default)]
    pub doe: DoeConfig,
}

fn default_mode() -> Mode {
    Mode::Multiplicative
}

fn default_split() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// CSV with `time,temperature,relative_humidity,corrosion_current`.
    File { path: PathBuf },
    /// Generated from the ground truth below with the run seed.
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorForm {
    ButlerVolmer,
    Expression,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub form: PriorForm,
    /// Prior formula over `T`, `H` and `parameters` (expression form).
    pub expression: Option<String>,
    pub parameters: Vec<String>,
    /// Starting point of the first fit restart.
    pub initial: Option<Vec<f64>>,
    pub bounds: Option<Vec<(f64, f64)>>,
    /// Parameter indices held at `initial`.
    pub fixed: Vec<usize>,
    pub restarts: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            form: PriorForm::ButlerVolmer,
            expression: None,
            parameters: Vec::new(),
            initial: None,
            bounds: None,
            fixed: Vec::new(),
            restarts: 20,
        }
    }
}

impl PriorConfig {
    pub fn build(&self) -> Result<PriorModel, ConfigError> {
        let invalid = |e: PriorError| ConfigError::invalid("prior", e.to_string());
        let mut model = match self.form {
            PriorForm::ButlerVolmer => {
                let init = self.initial.clone().unwrap_or_else(|| vec![1.0, 0.0, 1.0, 0.0]);
                let params: [f64; 4] = init.as_slice().try_into().map_err(|_| {
                    ConfigError::invalid(
                        "prior.initial",
                        format!("butler_volmer takes 4 values, got {}", init.len()),
                    )
                })?;
                let mut m = PriorModel::butler_volmer(params);
                if let Some(b) = &self.bounds {
                    m.bounds = b.clone();
                }
                m
            }
            PriorForm::Expression => {
                let text = self
                    .expression
                    .as_deref()
                    .ok_or_else(|| ConfigError::invalid("prior.expression", "required by the expression form"))?;
                let names: Vec<&str> = self.parameters.iter().map(String::as_str).collect();
                let init = self.initial.clone().unwrap_or_else(|| vec![1.0; names.len()]);
                PriorModel::expression(text, &names, &init, self.bounds.clone()).map_err(invalid)?
            }
        };
        for &k in &self.fixed {
            if k >= model.params.len() {
                return Err(ConfigError::invalid("prior.fixed", format!("index {k} out of range")));
            }
            model = model.fix(k);
        }
        model.validate().map_err(invalid)?;
        Ok(model)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub enabled: bool,
    /// `seed` and `parallel` here are replaced by the top-level values.
    pub mcmc: McmcConfig,
    pub priors: PriorSettings,
    /// Parameter names held at their point estimate.
    pub fixed: Vec<String>,
    /// Per-parameter prior replacements, keyed by name.
    pub overrides: BTreeMap<String, ParamPrior>,
    /// Central predictive interval checked for coverage.
    pub level: f64,
    pub predictive: PredictiveOptions,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            enabled: true,
            mcmc: McmcConfig::default(),
            priors: PriorSettings::default(),
            fixed: Vec::new(),
            overrides: BTreeMap::new(),
            level: 0.95,
            predictive: PredictiveOptions::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DoeConfig {
    pub enabled: bool,
    /// Propose even when coverage meets the level.
    pub always: bool,
    pub k: usize,
    /// Grid points per input dimension.
    pub grid: usize,
    /// `[T range, H range]`; defaults to `[0, 1]²` when normalized, else the
    /// observed input ranges.
    pub bounds: Option<[(f64, f64); 2]>,
    /// Expression in `T` and `H` with values in `[0, 1]`; uniform when absent.
    pub desirability: Option<String>,
}

impl Default for DoeConfig {
    fn default() -> Self {
        DoeConfig {
            enabled: true,
            always: false,
            k: 5,
            grid: 50,
            bounds: None,
            desirability: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| ConfigError::invalid("config", e.message().to_string()))?;
        cfg.sync();
        Ok(cfg)
    }

    /// Parse `path`; relative data paths resolve against its directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::invalid("config", format!("{}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        if let DataSource::File { path: data } = &mut cfg.data {
            if data.is_relative() {
                if let Some(dir) = path.parent() {
                    *data = dir.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Push the top-level seed and parallel flag into the stage settings.
    pub fn sync(&mut self) {
        self.discovery.seed = self.seed;
        self.discovery.parallel = self.parallel;
        self.calibration.mcmc.seed = self.seed;
        self.calibration.mcmc.parallel = self.parallel;
        self.calibration.predictive.parallel = self.parallel;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.discovery.validate()?;
        if self.calibration.enabled {
            self.calibration.mcmc.validate()?;
            if !(self.calibration.level > 0.0 && self.calibration.level < 1.0) {
                return Err(ConfigError::invalid("calibration.level", "must lie in (0, 1)"));
            }
        }
        if self.doe.enabled && (self.doe.k == 0 || self.doe.grid == 0) {
            return Err(ConfigError::invalid("doe", "k and grid must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let cfg = RunConfig::from_toml("seed = 7\n[data]\nsource = \"synthetic\"\n").unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, Mode::Multiplicative);
        assert_eq!(cfg.split, 0.5);
        assert_eq!(cfg.discovery.seed, 7);
        assert_eq!(cfg.calibration.mcmc.seed, 7);
        assert_eq!(cfg.data, DataSource::Synthetic(SyntheticSpec::default()));
        cfg.validate().unwrap();
    }

    #[test]
    fn seed_is_mandatory() {
        let err = RunConfig::from_toml("[data]\nsource = \"synthetic\"\n").unwrap_err();
        assert!(err.message.contains("seed"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("seed = 1\nsplitt = 0.5\n[data]\nsource = \"synthetic\"\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n[data]\nsource = \"synthetic\"\nnoise = 0.1\n").is_err());
    }

    #[test]
    fn round_trip() {
        let text = r#"
seed = 3
mode = "additive"
split = 0.4
normalize = false
pin_candidate = 2

[data]
source = "file"
path = "data.csv"

[prior]
form = "expression"
expression = "a*exp(b/T)"
parameters = ["a", "b"]
initial = [1.0, 0.0]

[calibration]
fixed = ["rho"]

[calibration.overrides.noise_var]
kind = "log_uniform"
lo = 1e-6
hi = 1.0

[doe]
desirability = "H"
"#;
        let cfg = RunConfig::from_toml(text).unwrap();
        assert_eq!(cfg.mode, Mode::Additive);
        assert_eq!(cfg.pin_candidate, Some(2));
        assert_eq!(
            cfg.calibration.overrides["noise_var"],
            ParamPrior::LogUniform { lo: 1e-6, hi: 1.0 }
        );
        let prior = cfg.prior.build().unwrap();
        assert_eq!(prior.params, vec![1.0, 0.0]);
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn prior_fixed_index_checked() {
        let p = PriorConfig {
            fixed: vec![9],
            ..Default::default()
        };
        assert!(p.build().is_err());
        let p = PriorConfig {
            fixed: vec![1],
            ..Default::default()
        };
        assert!(p.build().unwrap().is_fixed(1));
    }
}
