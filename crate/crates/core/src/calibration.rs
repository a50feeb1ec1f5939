//! Calibration profile documents.
//!
//! Profiles are stored as TOML. Every field is required; there are no implicit
//! defaults for the reference or half-span angles.
//!
//! ```toml
//! version = 1
//! theta_x_ref = 90.0
//! theta_y_ref = 90.0
//! theta_x_max = 30.0
//! theta_y_max = 20.0
//! servo_min = 0.0
//! servo_max = 180.0
//!
//! [crop]
//! start_x = 0
//! start_y = 0
//! width = 640
//! height = 480
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{CalibrationProfile, CropRegion, GeometryError};

pub const CALIBRATION_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("cannot read calibration file {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed calibration document: {0}")]
    Parse(String),
    #[error("unsupported calibration version {found} (expected {CALIBRATION_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("invalid calibration profile: {field}: {reason}")]
    InvalidProfile { field: &'static str, reason: String },
}

impl CalibrationError {
    /// Name of the offending field for invariant violations.
    pub fn field(&self) -> Option<&'static str> {
        match self {
            Self::InvalidProfile { field, .. } => Some(field),
            _ => None,
        }
    }
}

impl From<GeometryError> for CalibrationError {
    fn from(err: GeometryError) -> Self {
        match err {
            GeometryError::InvalidProfile { field, reason } => {
                Self::InvalidProfile { field, reason }
            }
            other => Self::InvalidProfile {
                field: "profile",
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CalibrationDocument {
    version: u32,
    theta_x_ref: f64,
    theta_y_ref: f64,
    theta_x_max: f64,
    theta_y_max: f64,
    servo_min: f64,
    servo_max: f64,
    crop: CropRegion,
}

/// Parses and validates a calibration document.
pub fn load_calibration(source: &str) -> Result<CalibrationProfile, CalibrationError> {
    let doc: CalibrationDocument =
        toml::from_str(source).map_err(|e| CalibrationError::Parse(e.message().to_owned()))?;
    if doc.version != CALIBRATION_VERSION {
        return Err(CalibrationError::UnsupportedVersion { found: doc.version });
    }
    let profile = CalibrationProfile::new(
        doc.crop,
        doc.theta_x_ref,
        doc.theta_y_ref,
        doc.theta_x_max,
        doc.theta_y_max,
        doc.servo_min,
        doc.servo_max,
    )?;
    Ok(profile)
}

pub fn load_calibration_file(path: &Path) -> Result<CalibrationProfile, CalibrationError> {
    let text = std::fs::read_to_string(path).map_err(|source| CalibrationError::Io {
        path: path.to_owned(),
        source,
    })?;
    load_calibration(&text)
}

/// Serializes a profile into the document format accepted by [`load_calibration`].
pub fn to_document(profile: &CalibrationProfile) -> String {
    let doc = CalibrationDocument {
        version: CALIBRATION_VERSION,
        theta_x_ref: profile.theta_x_ref,
        theta_y_ref: profile.theta_y_ref,
        theta_x_max: profile.theta_x_max,
        theta_y_max: profile.theta_y_max,
        servo_min: profile.servo_min,
        servo_max: profile.servo_max,
        crop: profile.crop,
    };
    toml::to_string(&doc).expect("calibration document serializes")
}
