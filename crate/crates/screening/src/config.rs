//! Screening configuration: file loading, overrides and validation.

use std::path::{Path, PathBuf};

use dynscreen_core::dynamics::EngineSettings;
use dynscreen_core::grid::{parse_grid_json, parse_matpower_case, CaseDefaults};
use dynscreen_core::overload::SafetyPolicy;
use dynscreen_core::rare_event::{
    CeParams, DurationFamily, Exceedance, DEFAULT_NOISE_SCALE, NOMINAL_FAULT_RATE,
};
use dynscreen_core::Grid;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Grid(#[from] dynscreen_core::GridError),
}

/// Which branches are watched for overloads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MonitoredSelector {
    #[default]
    All,
    Transformers,
    List(Vec<usize>),
}

/// Which branches the stratified sweep faults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FaultedSelector {
    #[default]
    All,
    First(usize),
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct OutputPaths {
    /// Directory receiving `report.json` and the CSV files.
    pub directory: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningConfig {
    /// MATPOWER `.m` case or grid JSON document.
    pub grid: PathBuf,
    /// Dynamic parameters for `.m` cases.
    pub case_defaults: CaseDefaults,
    pub horizon: f64,
    pub dt: f64,
    /// Nominal fault-duration rate `λ`.
    pub fault_rate: f64,
    pub duration_family: DurationFamily,
    /// `σ = noise_scale · β` on the faulted branch; 0 is the deterministic model.
    pub noise_scale: f64,
    /// Thresholds for the exceedance table, ascending.
    pub gammas: Vec<f64>,
    pub exceedance: Exceedance,
    pub policy: SafetyPolicy,
    /// Draws per faulted branch in the stratified sweep.
    pub samples_per_branch: usize,
    /// Draws in the final importance-sampling pool.
    pub samples: usize,
    pub ce: CeParams,
    pub seed: u64,
    /// Worker threads; `None` uses every core. Never affects results.
    pub workers: Option<usize>,
    pub monitored: MonitoredSelector,
    pub faulted: FaultedSelector,
    /// Scenarios used for the vulnerability ranking.
    pub top_scenarios: usize,
    /// Width of the fault-duration bins of the curves, in seconds.
    pub curve_bin: f64,
    pub output: OutputPaths,
}

impl Default for ScreeningConfig {
    fn default() -> Self {
        Self {
            grid: PathBuf::new(),
            case_defaults: CaseDefaults::default(),
            horizon: 20.0,
            dt: 0.01,
            fault_rate: NOMINAL_FAULT_RATE,
            duration_family: DurationFamily::Exponential,
            noise_scale: DEFAULT_NOISE_SCALE,
            gammas: vec![0.0, 0.5, 5.0, 10.0],
            exceedance: Exceedance::AtLeast,
            policy: SafetyPolicy::default(),
            samples_per_branch: 100,
            samples: 4000,
            ce: CeParams::default(),
            seed: 1,
            workers: None,
            monitored: MonitoredSelector::All,
            faulted: FaultedSelector::All,
            top_scenarios: 100,
            curve_bin: 0.1,
            output: OutputPaths::default(),
        }
    }
}

/// Command-line values that replace file values when present.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub grid: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub samples: Option<usize>,
    pub samples_per_branch: Option<usize>,
    pub noise_scale: Option<f64>,
    pub gammas: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub fault_rate: Option<f64>,
    pub output: Option<PathBuf>,
}

impl ScreeningConfig {
    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.into(), source })?;
        let syntax = |message: String| ConfigError::Syntax { path: path.into(), message };
        let mut cfg: Self = if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| syntax(e.to_string()))?
        } else {
            serde_json::from_str(&text).map_err(|e| syntax(e.to_string()))?
        };
        // Relative grid paths are relative to the config file.
        if cfg.grid.is_relative() && !cfg.grid.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                cfg.grid = dir.join(&cfg.grid);
            }
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: Overrides) {
        macro_rules! set {
            ($($f:ident),*) => { $(if let Some(v) = o.$f { self.$f = v; })* };
        }
        set!(grid, seed, samples, samples_per_branch, noise_scale, gammas, horizon, dt, fault_rate);
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if o.output.is_some() {
            self.output.directory = o.output;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        if self.grid.as_os_str().is_empty() {
            return bad("no grid source given");
        }
        let positive = [
            ("horizon", self.horizon),
            ("dt", self.dt),
            ("fault_rate", self.fault_rate),
            ("curve_bin", self.curve_bin),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::Invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad("noise_scale must be non-negative");
        }
        if self.samples == 0 || self.samples_per_branch == 0 {
            return bad("sample counts must be positive; an empty run has no report");
        }
        if self.top_scenarios == 0 {
            return bad("top_scenarios must be positive");
        }
        if self.gammas.is_empty() || self.gammas.iter().any(|g| !g.is_finite()) {
            return bad("gammas must be a non-empty list of finite thresholds");
        }
        if self.gammas.windows(2).any(|w| w[0] >= w[1]) {
            return bad("gammas must be strictly ascending");
        }
        if self.workers == Some(0) {
            return bad("workers must be positive");
        }
        self.policy.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.ce.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn engine_settings(&self) -> EngineSettings {
        EngineSettings { dt: self.dt, horizon: self.horizon, ..Default::default() }
    }

    /// Loads the grid and applies the monitored selector.
    pub fn load_grid(&self) -> Result<Grid, ConfigError> {
        let text = std::fs::read_to_string(&self.grid)
            .map_err(|source| ConfigError::Io { path: self.grid.clone(), source })?;
        let grid = if self.grid.extension().is_some_and(|e| e == "m") {
            parse_matpower_case(&text)?.to_grid(&self.case_defaults)?
        } else {
            parse_grid_json(&text)?
        };
        let monitored = match &self.monitored {
            MonitoredSelector::All => (0..grid.n_branches()).collect(),
            MonitoredSelector::Transformers => {
                (0..grid.n_branches()).filter(|&b| grid.branches()[b].transformer).collect()
            }
            MonitoredSelector::List(v) => v.clone(),
        };
        Ok(grid.with_monitored(monitored)?)
    }

    pub fn faulted_branches(&self, n_branches: usize) -> Result<Vec<usize>, ConfigError> {
        let list = match &self.faulted {
            FaultedSelector::All => (0..n_branches).collect(),
            FaultedSelector::First(k) => (0..(*k).min(n_branches)).collect(),
            FaultedSelector::List(v) => v.clone(),
        };
        if let Some(b) = list.iter().find(|&&b| b >= n_branches) {
            return Err(ConfigError::Invalid(format!("faulted branch {b} does not exist")));
        }
        Ok(list)
    }

    /// SHA-256 of the result-determining fields (workers and output paths
    /// excluded) together with the grid file contents.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.workers = None;
        canonical.output = OutputPaths::default();
        canonical.grid = PathBuf::new();
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&canonical).expect("config serializes"));
        match std::fs::read(&self.grid) {
            Ok(bytes) => h.update(&bytes),
            Err(_) => h.update(self.grid.to_string_lossy().as_bytes()),
        }
        hex::encode(h.finalize())
    }
}
