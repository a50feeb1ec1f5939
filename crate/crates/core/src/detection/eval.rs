//! Detector evaluation against dataset ground truth.
//!
//! A detection on a marker image is correct when its center lies within the
//! match radius (default: the ground-truth disc radius) of the true center.
//! Detections outside that radius, and any detection on a marker-absent
//! image, count as false positives.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::{read_png, DatasetError, DatasetManifest, Split};
use super::{DetectError, DetectorSpec, MarkerDetector};
use crate::geometry::PixelPoint;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("dataset missing: {0}")]
    MissingDataset(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Detect(#[from] DetectError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub split: Split,
    pub images: usize,
    pub marker_images: usize,
    pub correct: usize,
    pub recall: f64,
    pub mean_centroid_error_px: f64,
    pub max_centroid_error_px: f64,
    pub false_positives: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EvalOptions {
    /// Fixed match radius in pixels; `None` uses each image's marker radius.
    pub match_radius: Option<f64>,
}

pub fn evaluate_detector(
    spec: &DetectorSpec,
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
    options: EvalOptions,
) -> Result<SplitMetrics, EvalError> {
    let mut detector = spec.build()?;
    evaluate_with(&mut detector, dir, manifest, split, options)
}

pub fn evaluate_with(
    detector: &mut dyn MarkerDetector,
    dir: &Path,
    manifest: &DatasetManifest,
    split: Split,
    options: EvalOptions,
) -> Result<SplitMetrics, EvalError> {
    let entries: Vec<_> = manifest.split(split).collect();
    if entries.is_empty() {
        return Err(EvalError::MissingDataset(format!(
            "split {split} has no images in {}",
            dir.display()
        )));
    }
    let mut metrics = SplitMetrics {
        split,
        images: entries.len(),
        marker_images: 0,
        correct: 0,
        recall: 0.0,
        mean_centroid_error_px: 0.0,
        max_centroid_error_px: 0.0,
        false_positives: 0,
    };
    let mut error_sum = 0.0;
    for entry in entries {
        let path = dir.join(&entry.path);
        if !path.is_file() {
            return Err(EvalError::MissingDataset(format!(
                "{} not found",
                path.display()
            )));
        }
        let frame = read_png(&path)?;
        let detection = detector.detect(&frame)?;
        match (entry.marker, detection) {
            (Some(truth), Some(d)) => {
                metrics.marker_images += 1;
                let err = d.center().distance(&PixelPoint::new(truth.cx, truth.cy));
                if err <= options.match_radius.unwrap_or(truth.radius) {
                    metrics.correct += 1;
                    error_sum += err;
                    metrics.max_centroid_error_px = metrics.max_centroid_error_px.max(err);
                } else {
                    metrics.false_positives += 1;
                }
            }
            (Some(_), None) => metrics.marker_images += 1,
            (None, Some(_)) => metrics.false_positives += 1,
            (None, None) => {}
        }
    }
    if metrics.marker_images > 0 {
        metrics.recall = metrics.correct as f64 / metrics.marker_images as f64;
    }
    if metrics.correct > 0 {
        metrics.mean_centroid_error_px = error_sum / metrics.correct as f64;
    }
    Ok(metrics)
}
