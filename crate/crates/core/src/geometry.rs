//! Marker localization math.
//!
//! A detected marker center lives in the coordinate frame of the cropped
//! image (origin top-left, x right, y down). It is first re-expressed relative
//! to the crop center, then mapped affinely onto pan/tilt servo angles:
//!
//! ```text
//! x_marker = x_detected - width / 2
//! theta_x  = theta_x_ref - (x_marker / (width / 2)) * theta_x_max
//! ```
//!
//! and analogously for the y axis. `theta_*_max` is the angular half-span
//! between the crop center and the crop edge, so the edge at `+width/2` maps
//! to `theta_x_ref - theta_x_max`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("detected point ({x}, {y}) lies outside the {width}x{height} crop")]
    OutOfCrop {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("no detections available (need at least {required}, got {available})")]
    NoDetection { required: usize, available: usize },
    #[error("mapping is not invertible: {0} is zero")]
    NotInvertible(&'static str),
    #[error("invalid calibration profile: {field}: {reason}")]
    InvalidProfile { field: &'static str, reason: String },
}

/// A point in cropped-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PixelPoint {
    pub x: f64,
    pub y: f64,
}

impl PixelPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A point relative to the crop center, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct CenteredPoint {
    pub x: f64,
    pub y: f64,
}

impl CenteredPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanTiltAngles {
    pub theta_x: f64,
    pub theta_y: f64,
}

impl PanTiltAngles {
    pub const fn new(theta_x: f64, theta_y: f64) -> Self {
        Self { theta_x, theta_y }
    }
}

/// Result of [`compute_pan_tilt`]: the commanded angles plus whether either
/// axis had to be clamped into the servo range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PanTiltSolution {
    pub angles: PanTiltAngles,
    pub unclamped: PanTiltAngles,
    pub clamped: bool,
}

/// Region of the full camera frame that covers the target surgical site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropRegion {
    pub start_x: u32,
    pub start_y: u32,
    pub width: u32,
    pub height: u32,
}

impl CropRegion {
    pub fn new(start_x: u32, start_y: u32, width: u32, height: u32) -> Result<Self, GeometryError> {
        let crop = Self {
            start_x,
            start_y,
            width,
            height,
        };
        crop.validate()?;
        Ok(crop)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if self.width == 0 {
            return Err(invalid("crop.width", "must be > 0"));
        }
        if self.height == 0 {
            return Err(invalid("crop.height", "must be > 0"));
        }
        Ok(())
    }

    /// Whether the crop lies entirely inside a `frame_width` x `frame_height` frame.
    pub fn fits_within(&self, frame_width: u32, frame_height: u32) -> bool {
        u64::from(self.start_x) + u64::from(self.width) <= u64::from(frame_width)
            && u64::from(self.start_y) + u64::from(self.height) <= u64::from(frame_height)
    }

    pub fn half_width(&self) -> f64 {
        f64::from(self.width) / 2.0
    }

    pub fn half_height(&self) -> f64 {
        f64::from(self.height) / 2.0
    }

    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.half_width(), self.half_height())
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> GeometryError {
    GeometryError::InvalidProfile {
        field,
        reason: reason.into(),
    }
}

/// The full parameter set of the pixel-to-angle mapping. Values are fixed
/// during a manual calibration step before the device is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationProfile {
    pub crop: CropRegion,
    pub theta_x_ref: f64,
    pub theta_y_ref: f64,
    pub theta_x_max: f64,
    pub theta_y_max: f64,
    pub servo_min: f64,
    pub servo_max: f64,
}

impl CalibrationProfile {
    /// Builds and validates a profile.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        crop: CropRegion,
        theta_x_ref: f64,
        theta_y_ref: f64,
        theta_x_max: f64,
        theta_y_max: f64,
        servo_min: f64,
        servo_max: f64,
    ) -> Result<Self, GeometryError> {
        let profile = Self {
            crop,
            theta_x_ref,
            theta_y_ref,
            theta_x_max,
            theta_y_max,
            servo_min,
            servo_max,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// Crop 640x480 at the origin, reference (90, 90), half-span (30, 20),
    /// servo range [0, 180].
    pub fn default_profile() -> Self {
        Self {
            crop: CropRegion {
                start_x: 0,
                start_y: 0,
                width: 640,
                height: 480,
            },
            theta_x_ref: 90.0,
            theta_y_ref: 90.0,
            theta_x_max: 30.0,
            theta_y_max: 20.0,
            servo_min: 0.0,
            servo_max: 180.0,
        }
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        self.crop.validate()?;
        let fields = [
            ("theta_x_ref", self.theta_x_ref),
            ("theta_y_ref", self.theta_y_ref),
            ("theta_x_max", self.theta_x_max),
            ("theta_y_max", self.theta_y_max),
            ("servo_min", self.servo_min),
            ("servo_max", self.servo_max),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(invalid(field, "must be finite"));
            }
        }
        if self.theta_x_max <= 0.0 {
            return Err(invalid(
                "theta_x_max",
                format!("must be > 0, got {}", self.theta_x_max),
            ));
        }
        if self.theta_y_max <= 0.0 {
            return Err(invalid(
                "theta_y_max",
                format!("must be > 0, got {}", self.theta_y_max),
            ));
        }
        if self.servo_min >= self.servo_max {
            return Err(invalid("servo_min", "must be below servo_max"));
        }
        // The whole crop must be reachable without clamping.
        let axes = [
            ("theta_x_max", self.theta_x_ref, self.theta_x_max),
            ("theta_y_max", self.theta_y_ref, self.theta_y_max),
        ];
        for (field, reference, half_span) in axes {
            let (lo, hi) = (reference - half_span, reference + half_span);
            if lo < self.servo_min || hi > self.servo_max {
                return Err(invalid(
                    field,
                    format!(
                        "span [{lo}, {hi}] exceeds servo range [{}, {}]",
                        self.servo_min, self.servo_max
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn reference_angles(&self) -> PanTiltAngles {
        PanTiltAngles::new(self.theta_x_ref, self.theta_y_ref)
    }

    pub fn clamp_angle(&self, theta: f64) -> f64 {
        theta.clamp(self.servo_min, self.servo_max)
    }
}

impl Default for CalibrationProfile {
    fn default() -> Self {
        Self::default_profile()
    }
}

/// Re-expresses a detected center relative to the crop center.
pub fn correct_marker_coords(
    detected: PixelPoint,
    crop: &CropRegion,
) -> Result<CenteredPoint, GeometryError> {
    let (w, h) = (f64::from(crop.width), f64::from(crop.height));
    let inside = (0.0..=w).contains(&detected.x) && (0.0..=h).contains(&detected.y);
    if !inside {
        return Err(GeometryError::OutOfCrop {
            x: detected.x,
            y: detected.y,
            width: crop.width,
            height: crop.height,
        });
    }
    Ok(CenteredPoint::new(
        detected.x - w / 2.0,
        detected.y - h / 2.0,
    ))
}

/// Maps a centered marker position to servo angles, clamping into the servo
/// range. Clamping never fails; it is reported through
/// [`PanTiltSolution::clamped`].
pub fn compute_pan_tilt(marker: CenteredPoint, cal: &CalibrationProfile) -> PanTiltSolution {
    let theta_x = cal.theta_x_ref - (marker.x / cal.crop.half_width()) * cal.theta_x_max;
    let theta_y = cal.theta_y_ref - (marker.y / cal.crop.half_height()) * cal.theta_y_max;
    let unclamped = PanTiltAngles::new(theta_x, theta_y);
    let angles = PanTiltAngles::new(cal.clamp_angle(theta_x), cal.clamp_angle(theta_y));
    PanTiltSolution {
        angles,
        unclamped,
        clamped: angles != unclamped,
    }
}

/// Exact algebraic inverse of [`compute_pan_tilt`] (before clamping).
pub fn invert_pan_tilt(
    angles: PanTiltAngles,
    cal: &CalibrationProfile,
) -> Result<CenteredPoint, GeometryError> {
    if cal.theta_x_max == 0.0 {
        return Err(GeometryError::NotInvertible("theta_x_max"));
    }
    if cal.theta_y_max == 0.0 {
        return Err(GeometryError::NotInvertible("theta_y_max"));
    }
    let x = ((cal.theta_x_ref - angles.theta_x) / cal.theta_x_max) * cal.crop.half_width();
    let y = ((cal.theta_y_ref - angles.theta_y) / cal.theta_y_max) * cal.crop.half_height();
    Ok(CenteredPoint::new(x, y))
}

/// Arithmetic mean of the available detected centers.
pub fn average_centers(
    detections: &[PixelPoint],
    min_count: usize,
) -> Result<PixelPoint, GeometryError> {
    let required = min_count.max(1);
    if detections.len() < required {
        return Err(GeometryError::NoDetection {
            required,
            available: detections.len(),
        });
    }
    let n = detections.len() as f64;
    let (sx, sy) = detections
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Ok(PixelPoint::new(sx / n, sy / n))
}

/// Converts a centered point back into cropped-image coordinates.
pub fn uncenter(point: CenteredPoint, crop: &CropRegion) -> PixelPoint {
    PixelPoint::new(point.x + crop.half_width(), point.y + crop.half_height())
}
