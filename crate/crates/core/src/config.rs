//! Experiment configuration and its flat `key = value` file format.
//!
//! ```text
//! # ou-jump consistency ladder
//! model = ou-jump
//! theta = 1
//! ladder = 500:0.01:auto; 2000:0.01:auto; 8000:0.01:auto
//! reps = 200
//! seed = 11
//! points = 0.0, 0.3
//! ```
//!
//! Blank lines and `#` comments are ignored. Unknown keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Bandwidth;
use crate::par::Execution;
use crate::presets::{Preset, PresetParams};

/// One `(n, Δ, h)` rung of an experiment ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rung {
    pub n: usize,
    pub delta: f64,
    pub bandwidth: Bandwidth,
}

impl Rung {
    pub fn new(n: usize, delta: f64, bandwidth: Bandwidth) -> Self {
        Self { n, delta, bandwidth }
    }

    pub fn h(&self) -> Result<f64> {
        self.bandwidth.resolve(self.delta)
    }

    /// `n Δ`, the observed time span.
    pub fn span(&self) -> f64 {
        self.n as f64 * self.delta
    }
}

impl FromStr for Rung {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').map(str::trim).collect();
        let [n, delta, h] = parts[..] else {
            return Err(Error::Config(format!("ladder rung '{s}' is not n:delta:h")));
        };
        let n = n
            .parse()
            .map_err(|_| Error::Config(format!("rung '{s}': n must be a positive integer")))?;
        let delta: f64 = delta
            .parse()
            .map_err(|_| Error::Config(format!("rung '{s}': delta must be a number")))?;
        if !(delta > 0.0) {
            return Err(Error::Config(format!("rung '{s}': delta must be positive")));
        }
        Ok(Self::new(n, delta, h.parse()?))
    }
}

/// Which estimators an experiment evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EstimatorSet {
    pub density: bool,
    pub drift: bool,
    pub second: bool,
    /// Also evaluate the exact-data baselines.
    pub baseline: bool,
}

impl Default for EstimatorSet {
    fn default() -> Self {
        Self {
            density: true,
            drift: true,
            second: true,
            baseline: false,
        }
    }
}

impl FromStr for EstimatorSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = Self {
            density: false,
            drift: false,
            second: false,
            baseline: false,
        };
        for item in s.split(',').map(str::trim).filter(|t| !t.is_empty()) {
            match item {
                "density" => set.density = true,
                "drift" => set.drift = true,
                "second" => set.second = true,
                "baseline" => set.baseline = true,
                other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
            }
        }
        Ok(set)
    }
}

/// Settings of the long-run simulation used as the stationary density oracle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleSettings {
    pub horizon: f64,
    pub fine_step: f64,
    pub bandwidth: f64,
    /// Keep every `thin`-th fine state.
    pub thin: usize,
    pub burn_in: f64,
    pub seed: u64,
}

impl Default for OracleSettings {
    fn default() -> Self {
        Self {
            horizon: 1e4,
            fine_step: 1e-3,
            bandwidth: 0.05,
            thin: 10,
            burn_in: 50.0,
            seed: 0x0dd5_eed0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExperimentMode {
    Consistency,
    Normality,
    Both,
}

impl FromStr for ExperimentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "consistency" => Ok(Self::Consistency),
            "normality" => Ok(Self::Normality),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!(
                "unknown mode '{other}' (expected consistency, normality or both)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: PresetParams,
    pub points: Vec<f64>,
    pub ladder: Vec<Rung>,
    pub reps: usize,
    pub seed: u64,
    pub kernel: String,
    /// Fine Euler steps per sampling interval.
    pub substeps: usize,
    /// Simulated time discarded before each dataset.
    pub burn_in: f64,
    pub estimators: EstimatorSet,
    pub mode: ExperimentMode,
    pub oracle: OracleSettings,
    /// Where the density oracle is cached; no caching when absent.
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(model: PresetParams, ladder: Vec<Rung>, points: Vec<f64>) -> Self {
        Self {
            model,
            points,
            ladder,
            reps: 200,
            seed: 1,
            kernel: "gaussian".into(),
            substeps: 10,
            burn_in: 20.0,
            estimators: EstimatorSet::default(),
            mode: ExperimentMode::Both,
            oracle: OracleSettings::default(),
            cache_dir: None,
            execution: Execution::Parallel,
        }
    }

    /// Hard errors for unusable configs; the asymptotic side conditions come
    /// back as warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.ladder.is_empty() {
            return Err(Error::Config("ladder is empty".into()));
        }
        if self.points.is_empty() {
            return Err(Error::Config("no evaluation points".into()));
        }
        if self.reps < 2 {
            return Err(Error::Config(format!("reps must be at least 2, got {}", self.reps)));
        }
        if self.substeps == 0 {
            return Err(Error::Config("substeps must be positive".into()));
        }
        if !(self.burn_in >= 0.0) {
            return Err(Error::Config("burn_in must be nonnegative".into()));
        }
        let mut warnings = Vec::new();
        for (i, rung) in self.ladder.iter().enumerate() {
            if rung.n == 0 {
                return Err(Error::Config(format!("rung {i}: n must be positive")));
            }
            let h = rung.h().map_err(|e| Error::Config(format!("rung {i}: {e}")))?;
            if rung.span() < 50.0 {
                warnings.push(format!("rung {i}: n Δ = {} is below 50", rung.span()));
            }
            if h * rung.span() < 10.0 {
                warnings.push(format!("rung {i}: h n Δ = {} is below 10", h * rung.span()));
            }
        }
        Ok(warnings)
    }

    /// The ladder must make `h n Δ^3` strictly decrease for normality runs.
    pub fn validate_normality(&self) -> Result<()> {
        let mut last = f64::INFINITY;
        for (i, rung) in self.ladder.iter().enumerate() {
            let v = rung.h()? * rung.span() * rung.delta * rung.delta;
            if !(v < last) {
                return Err(Error::Config(format!(
                    "rung {i}: h n Δ³ = {v:e} does not decrease along the ladder"
                )));
            }
            last = v;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
            let key = key.trim().to_string();
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Self::from_entries(&entries)
    }

    pub fn from_entries(entries: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| entries.get(k).map(String::as_str);
        let preset: Preset = get("model")
            .ok_or_else(|| Error::Config("missing key 'model'".into()))?
            .parse()?;
        let mut model = PresetParams::new(preset);
        let ladder = get("ladder")
            .ok_or_else(|| Error::Config("missing key 'ladder'".into()))?
            .split(';')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Rung>>>()?;
        let points = get("points")
            .unwrap_or("0")
            .split(',')
            .map(|s| parse_num::<f64>("points", s))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = Self::new(model, ladder, points);

        for (key, value) in entries {
            match key.as_str() {
                "model" | "ladder" | "points" => {}
                k if PresetParams::KEYS.contains(&k) => model.set(k, parse_num(k, value)?)?,
                "reps" => cfg.reps = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "kernel" => cfg.kernel = value.clone(),
                "substeps" => cfg.substeps = parse_num(key, value)?,
                "burn_in" => cfg.burn_in = parse_num(key, value)?,
                "estimators" => cfg.estimators = value.parse()?,
                "mode" => cfg.mode = value.parse()?,
                "oracle_horizon" => cfg.oracle.horizon = parse_num(key, value)?,
                "oracle_step" => cfg.oracle.fine_step = parse_num(key, value)?,
                "oracle_bandwidth" => cfg.oracle.bandwidth = parse_num(key, value)?,
                "oracle_thin" => cfg.oracle.thin = parse_num(key, value)?,
                "oracle_seed" => cfg.oracle.seed = parse_num(key, value)?,
                other => return Err(Error::Config(format!("unknown config key '{other}'"))),
            }
        }
        cfg.model = model;
        Ok(cfg)
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse '{}'", value.trim())))
}
