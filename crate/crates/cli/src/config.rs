//! Optional TOML settings file. Command-line flags win over environment
//! variables (both handled by clap), which win over the file.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sls_core::controller::TimingConfig;
use sls_core::geometry::CalibrationProfile;
use sls_core::load_calibration_file;
use sls_sim::DetectorKind;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub calibration: Option<PathBuf>,
    /// External broker; when unset the process hosts its own.
    pub broker: Option<String>,
    /// Listen endpoint of the embedded broker.
    pub listen: Option<String>,
    pub topic: Option<String>,
    pub seed: Option<u64>,
    pub detector: Option<DetectorKind>,
    pub console_listen: Option<String>,
    pub keep_alive_s: Option<u16>,
    pub client_id_prefix: Option<String>,
    pub timing: Option<TimingConfig>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config file {}: {e}", path.display()))
        })?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| {
            CliError::Config(format!("config file {}: {}", path.display(), e.message()))
        })?;
        // Paths in the file are relative to the file.
        if let (Some(cal), Some(dir)) = (cfg.calibration.as_mut(), path.parent()) {
            if cal.is_relative() {
                *cal = dir.join(&*cal);
            }
        }
        Ok(cfg)
    }
}

/// Loads the calibration profile, or the built-in default when no path was given.
pub fn calibration(path: Option<&Path>) -> Result<CalibrationProfile, CliError> {
    match path {
        Some(p) => load_calibration_file(p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(CalibrationProfile::default_profile()),
    }
}

/// Per-phase overrides, in seconds.
#[derive(Debug, Clone, Copy, Default)]
pub struct TimingOverrides {
    pub init_s: Option<f64>,
    pub capture_s: Option<f64>,
    pub detect_s: Option<f64>,
}

impl TimingOverrides {
    pub fn apply(&self, base: TimingConfig) -> Result<TimingConfig, CliError> {
        let t = TimingConfig {
            init_duration: self.init_s.unwrap_or(base.init_duration),
            capture_window: self.capture_s.unwrap_or(base.capture_window),
            detect_budget: self.detect_s.unwrap_or(base.detect_budget),
            ..base
        };
        t.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(t)
    }
}
