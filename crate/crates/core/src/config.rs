//! Experiment configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::FgoConfig;
use crate::channel::ChannelConfig;
use crate::harness::{Algorithm, AlgorithmSettings, DelayCell, FilterSettings, SimulationSetup};
use crate::models::MeasurementMode;
use crate::scenario::{ScenarioConfig, SensorSpec};

/// Runs per cell in desk-scale mode.
pub const DEFAULT_RUNS: usize = 50;
/// Runs per cell with `--full-scale`.
pub const FULL_SCALE_RUNS: usize = 500;

/// What the acoustic payload carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeasurementKind {
    #[default]
    Position,
    /// Range, bearing and depth relative to the leader.
    RangeBearing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub runs: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
    /// Fixed-delay cells, s.
    pub delay_cells: Vec<f64>,
    /// Also run the distance-driven delay profile.
    pub include_dynamic: bool,
    /// RMSE above this marks a run diverged, m.
    pub divergence_threshold: f64,
    pub measurement: MeasurementKind,
    pub scenario: ScenarioConfig,
    pub sensors: SensorSpec,
    pub channel: ChannelConfig,
    pub filter: FilterSettings,
    pub algorithms: AlgorithmSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            runs: DEFAULT_RUNS,
            master_seed: 42,
            output_dir: PathBuf::from("results"),
            delay_cells: vec![10.0, 20.0, 30.0],
            include_dynamic: true,
            divergence_threshold: 50.0,
            measurement: MeasurementKind::Position,
            scenario: ScenarioConfig::default(),
            sensors: SensorSpec::default(),
            channel: ChannelConfig::default(),
            filter: FilterSettings::default(),
            algorithms: AlgorithmSettings::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.into(), reason: reason.into() }
}

/// Flag values that replace file values when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub delay_ceiling: Option<f64>,
    pub algorithms: Option<Vec<Algorithm>>,
    pub output_dir: Option<PathBuf>,
    pub full_scale: bool,
}

impl ExperimentConfig {
    /// Parses TOML; unknown keys are rejected.
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_string(), message: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Loads `path` (or defaults), applies overrides, then validates.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = match path {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if o.full_scale {
            self.runs = FULL_SCALE_RUNS;
        }
        if let Some(r) = o.runs {
            self.runs = r;
        }
        if let Some(s) = o.seed {
            self.master_seed = s;
        }
        if let Some(c) = o.delay_ceiling {
            self.channel.delay_ceiling = c;
            self.delay_cells = vec![c];
        }
        if let Some(a) = &o.algorithms {
            self.algorithms.enabled = a.clone();
        }
        if let Some(d) = &o.output_dir {
            self.output_dir = d.clone();
        }
    }

    /// Checks every nested invariant; errors name the offending field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.runs == 0 {
            return Err(invalid("runs", "must be at least 1"));
        }
        if self.delay_cells.is_empty() && !self.include_dynamic {
            return Err(invalid("delay_cells", "no delay cell to run"));
        }
        for (i, d) in self.delay_cells.iter().enumerate() {
            if !(*d >= 0.0 && d.is_finite()) {
                return Err(invalid(format!("delay_cells[{i}]"), "must be a non-negative number of seconds"));
            }
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(invalid("divergence_threshold", "must be positive"));
        }
        nested("scenario", self.scenario.validate())?;
        nested("sensors", self.sensors.validate())?;
        nested("channel", self.channel.validate())?;
        self.filter.validate().map_err(|e| invalid(e.split(' ').next().unwrap_or("filter"), e.clone()))?;
        let algs = &self.algorithms;
        if algs.enabled.is_empty() {
            return Err(invalid("algorithms.enabled", "no algorithm selected"));
        }
        nested("algorithms.tskf.gp.hyperparams", algs.tskf.gp.hyperparams.validate())?;
        if algs.tskf.gp.window == 0 {
            return Err(invalid("algorithms.tskf.gp.window", "must be at least 1"));
        }
        if let Some(p) = algs.tskf.gate_probability {
            if !(p > 0.0 && p < 1.0) {
                return Err(invalid("algorithms.tskf.gate_probability", "must lie in (0, 1)"));
            }
        }
        nested("algorithms.ukf", algs.ukf.validate(9))?;
        nested("algorithms.fgo", FgoConfig::validate(&algs.fgo))?;
        if algs.aug_ekf.budget_bytes == 0 {
            return Err(invalid("algorithms.aug_ekf.budget_bytes", "must be positive"));
        }
        Ok(())
    }

    /// The simulation inputs shared by every cell.
    pub fn setup(&self) -> SimulationSetup {
        let measurement = match self.measurement {
            MeasurementKind::Position => MeasurementMode::Position,
            MeasurementKind::RangeBearing => MeasurementMode::RangeBearing { reference: self.channel.leader() },
        };
        SimulationSetup {
            scenario: self.scenario.clone(),
            sensors: self.sensors.clone(),
            channel: self.channel.clone(),
            measurement,
            filter: self.filter,
            algorithms: self.algorithms.clone(),
            divergence_threshold: self.divergence_threshold,
        }
    }

    pub fn cells(&self) -> Vec<DelayCell> {
        let mut cells: Vec<DelayCell> = self.delay_cells.iter().map(|d| DelayCell::Fixed(*d)).collect();
        if self.include_dynamic {
            cells.push(DelayCell::Dynamic);
        }
        cells
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

/// Prefixes a nested validation error with its table path.
fn nested<E: std::fmt::Display>(prefix: &str, r: Result<(), E>) -> Result<(), ConfigError> {
    r.map_err(|e| {
        let msg = e.to_string();
        // Nested errors quote the field name in backticks.
        let field = msg.split('`').nth(1).map(|f| format!("{prefix}.{f}")).unwrap_or_else(|| prefix.to_string());
        invalid(field, msg)
    })
}
