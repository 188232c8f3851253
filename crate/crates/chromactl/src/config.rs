//! Application configuration, loaded from a TOML file.
//!
//! Every key has a default, so an empty file (or no file) is a valid
//! three-pump configuration.

use std::fs;
use std::path::{Path, PathBuf};

use chromactl_core::translate::PipelineConfig;
use chromactl_core::{DeviceLimits, MixConfig, PumpModel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONFIG_PATH: &str = "chromactl.toml";
pub const DEFAULT_HISTORY_PATH: &str = "chromactl-history.jsonl";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    pub seed: u64,
    pub noise_on: bool,
    /// Pump physics of the simulated rig. Empty means "same as `pumps`".
    pub models: Vec<PumpModel>,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            seed: 0,
            noise_on: true,
            models: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub timeout_s: f64,
    /// Use the rule-based translator when the model output fails validation.
    pub fallback: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        LlmConfig {
            timeout_s: 10.0,
            fallback: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    /// Unit-RGB distance below which a run counts as a match.
    pub match_threshold: f64,
    pub default_volume_ml: f64,
    /// Empty string disables persistence.
    pub history_path: String,
    pub mix: MixConfig,
    pub limits: DeviceLimits,
    /// Per-pump models used for planning; calibration rewrites these.
    pub pumps: Vec<PumpModel>,
    pub device: DeviceConfig,
    pub llm: LlmConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            match_threshold: 0.1,
            default_volume_ml: 5.0,
            history_path: DEFAULT_HISTORY_PATH.to_string(),
            mix: MixConfig::default(),
            limits: DeviceLimits::default(),
            pumps: vec![PumpModel::default(); 3],
            device: DeviceConfig::default(),
            llm: LlmConfig::default(),
        }
    }
}

impl AppConfig {
    /// Four pumps: three inks plus clear diluent.
    pub fn with_diluent() -> Self {
        AppConfig {
            mix: MixConfig::default().with_diluent(),
            limits: DeviceLimits::for_pumps(4),
            pumps: vec![PumpModel::default(); 4],
            ..AppConfig::default()
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ConfigError::Parse { message, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: AppConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::new(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.match_threshold > 0.0 && self.match_threshold < 3f64.sqrt()) {
            return bad(format!("match_threshold {} must be in (0, sqrt 3)", self.match_threshold));
        }
        if !(self.default_volume_ml.is_finite() && self.default_volume_ml > 0.0) {
            return bad("default_volume_ml must be positive".into());
        }
        self.mix.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let n = self.mix.pump_count;
        if self.pumps.len() != n {
            return bad(format!("{} pump models for {n} pumps", self.pumps.len()));
        }
        if self.limits.pump_count != n || self.limits.reservoir_ml.len() != n {
            return bad(format!("limits must describe {n} pumps"));
        }
        if !self.device.models.is_empty() && self.device.models.len() != n {
            return bad(format!("{} device models for {n} pumps", self.device.models.len()));
        }
        for m in self.pumps.iter().chain(&self.device.models) {
            m.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if m.v_max > self.limits.v_max {
                return bad(format!("pump V_max {} exceeds the limit {}", m.v_max, self.limits.v_max));
            }
        }
        if !(self.llm.timeout_s.is_finite() && self.llm.timeout_s > 0.0) {
            return bad("llm.timeout_s must be positive".into());
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            mix: self.mix.clone(),
            models: self.pumps.clone(),
            limits: self.limits.clone(),
            default_volume_ml: self.default_volume_ml,
        }
    }

    /// Physics of the simulated rig.
    pub fn device_models(&self) -> Vec<PumpModel> {
        if self.device.models.is_empty() {
            self.pumps.clone()
        } else {
            self.device.models.clone()
        }
    }

    pub fn history_path(&self) -> Option<PathBuf> {
        (!self.history_path.is_empty()).then(|| PathBuf::from(&self.history_path))
    }
}
