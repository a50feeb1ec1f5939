//! Marker detection.
//!
//! [`MarkerDetector`] is the seam the controller talks to. Two implementations
//! ship here: the deterministic HSV [`BlobDetector`] and [`ExternalDetector`],
//! which forwards frames over a local socket to an out-of-process model.

pub mod blob;
pub mod dataset;
pub mod eval;
pub mod external;
pub mod hsv;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::Frame;
use crate::geometry::{CropRegion, PixelPoint};

pub use blob::reference_blob_detect;
pub use external::ExternalDetector;

#[derive(Debug, Error)]
pub enum DetectError {
    #[error("frame is {actual_w}x{actual_h}, expected the {expected_w}x{expected_h} crop")]
    BadFrame {
        expected_w: u32,
        expected_h: u32,
        actual_w: u32,
        actual_h: u32,
    },
    #[error("external detector: {0}")]
    External(#[from] external::ExternalError),
    #[error("invalid detector parameters: {0}")]
    InvalidParams(String),
}

/// Axis-aligned pixel box in cropped-image coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn contains(&self, p: PixelPoint) -> bool {
        p.x >= f64::from(self.x)
            && p.y >= f64::from(self.y)
            && p.x <= f64::from(self.x + self.w)
            && p.y <= f64::from(self.y + self.h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub center_x: f64,
    pub center_y: f64,
    pub confidence: f64,
    pub bbox: BBox,
}

impl Detection {
    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.center_x, self.center_y)
    }
}

/// Half-open hue interval `[start, end)` in degrees. `start == end` is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HueRange {
    start: f32,
    end: f32,
}

impl HueRange {
    pub fn new(start: f32, end: f32) -> Result<Self, DetectError> {
        if !(0.0..=360.0).contains(&start) || !(0.0..=360.0).contains(&end) || start > end {
            return Err(DetectError::InvalidParams(format!(
                "hue range [{start}, {end}) outside [0, 360)"
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, hue: f32) -> bool {
        hue >= self.start && hue < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn start(&self) -> f32 {
        self.start
    }

    pub fn end(&self) -> f32 {
        self.end
    }
}

/// Thresholds for the reference blob detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlobParams {
    pub hue: HueRange,
    pub saturation_min: f32,
    pub value_min: f32,
    pub min_area: usize,
    pub min_circularity: f64,
}

impl Default for BlobParams {
    fn default() -> Self {
        Self {
            hue: HueRange {
                start: 200.0,
                end: 260.0,
            },
            saturation_min: 0.45,
            value_min: 0.25,
            min_area: 12,
            min_circularity: 0.6,
        }
    }
}

impl BlobParams {
    pub fn validate(&self) -> Result<(), DetectError> {
        HueRange::new(self.hue.start, self.hue.end)?;
        if self.min_area < 1 {
            return Err(DetectError::InvalidParams("min_area must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DetectorSpec {
    ReferenceBlob(BlobParams),
    External { endpoint: String, timeout_ms: u64 },
}

impl Default for DetectorSpec {
    fn default() -> Self {
        Self::ReferenceBlob(BlobParams::default())
    }
}

impl DetectorSpec {
    pub fn build(&self) -> Result<Box<dyn MarkerDetector + Send>, DetectError> {
        Ok(match self {
            Self::ReferenceBlob(params) => {
                params.validate()?;
                Box::new(BlobDetector::new(*params))
            }
            Self::External {
                endpoint,
                timeout_ms,
            } => Box::new(ExternalDetector::new(
                endpoint.clone(),
                std::time::Duration::from_millis(*timeout_ms),
            )),
        })
    }
}

/// Finds the blue marker in a cropped frame.
pub trait MarkerDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError>;
}

impl<D: MarkerDetector + ?Sized> MarkerDetector for Box<D> {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError> {
        (**self).detect(frame)
    }
}

#[derive(Debug, Clone, Default)]
pub struct BlobDetector {
    pub params: BlobParams,
}

impl BlobDetector {
    pub fn new(params: BlobParams) -> Self {
        Self { params }
    }
}

impl MarkerDetector for BlobDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError> {
        Ok(reference_blob_detect(frame, &self.params))
    }
}

/// Checks that `frame` matches the crop and runs `detector` on it.
pub fn detect(
    frame: &Frame,
    crop: &CropRegion,
    detector: &mut dyn MarkerDetector,
) -> Result<Option<Detection>, DetectError> {
    if frame.width() != crop.width || frame.height() != crop.height {
        return Err(DetectError::BadFrame {
            expected_w: crop.width,
            expected_h: crop.height,
            actual_w: frame.width(),
            actual_h: frame.height(),
        });
    }
    detector.detect(frame)
}
