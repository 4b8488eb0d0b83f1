//! Run configuration: a single JSON document with strict key checking and
//! admissibility validation of the exponent pair at load time.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::liealg::Convention;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "L")]
    pub l: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentConfig {
    pub s: f64,
    pub l: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub eps: f64,
    pub seed: u64,
    pub abelian_flag: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    pub dt: f64,
    #[serde(rename = "T")]
    pub t: f64,
    pub picard_tol: f64,
    pub picard_max: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub directory: PathBuf,
    pub snapshot_stride: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ConventionConfig {
    Paper,
    Physics,
}

impl From<ConventionConfig> for Convention {
    fn from(c: ConventionConfig) -> Self {
        match c {
            ConventionConfig::Paper => Convention::Paper,
            ConventionConfig::Physics => Convention::Physics,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub exponents: ExponentConfig,
    pub data: DataConfig,
    pub integrator: IntegratorConfig,
    pub convention: ConventionConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Admissible exponent window plus positivity of every numeric knob.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let (s, l) = (self.exponents.s, self.exponents.l);
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(s > 0.75) {
            return bad("exponent s must exceed 3/4");
        }
        if !(l > 0.25) {
            return bad("exponent l must exceed 1/4");
        }
        if !(s >= l && l >= s - 1.0) {
            return bad("exponents must satisfy s >= l >= s - 1");
        }
        if !(2.0 * s - l > 1.0) {
            return bad("exponents must satisfy 2s - l > 1");
        }
        if !(l - s >= -0.5) {
            return bad("exponents must satisfy l - s >= -1/2");
        }
        if !(self.exponents.delta > 0.0) {
            return bad("delta must be positive");
        }
        if self.grid.n < 4 || self.grid.n % 2 != 0 {
            return bad("grid N must be an even integer >= 4");
        }
        if !(self.grid.l > 0.0) {
            return bad("box length L must be positive");
        }
        if !(self.data.eps >= 0.0) {
            return bad("eps must be nonnegative");
        }
        if !(self.integrator.dt > 0.0 && self.integrator.t > 0.0) {
            return bad("dt and T must be positive");
        }
        if self.integrator.dt > self.integrator.t {
            return bad("dt must not exceed T");
        }
        if !(self.integrator.picard_tol > 0.0) {
            return bad("picard_tol must be positive");
        }
        if self.integrator.picard_max == 0 {
            return bad("picard_max must be at least 1");
        }
        if self.output.snapshot_stride == 0 {
            return bad("snapshot_stride must be at least 1");
        }
        Ok(())
    }
}
