//! Closed-loop accuracy over random static marker positions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sls_core::controller::CycleOutcome;
use sls_core::geometry::PixelPoint;

use crate::detectors::DetectorKind;
use crate::rig::{Rig, RigConfig, RigError};
use crate::world::Marker;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub marker: PixelPoint,
    pub radius: f64,
    pub outcome: CycleOutcome,
    pub detections: u8,
    pub beam: PixelPoint,
    pub error_px: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub detector: DetectorKind,
    pub seed: u64,
    pub positions: usize,
    pub aimed: usize,
    pub mean_error_px: f64,
    pub max_error_px: f64,
    pub sim_ms: u64,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Places a marker at `positions` random spots, one trigger each, and
/// measures where the beam ends up. Markers keep a margin of `radius + 2`
/// pixels from the crop edge.
pub fn closed_loop_sweep(config: RigConfig, positions: usize) -> Result<SweepReport, RigError> {
    let detector = config.detector;
    let seed = config.seed;
    let crop = config.calibration.crop;
    let mut rig = Rig::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EE9);
    rig.controller.power_on(0)?;

    let mut points = Vec::with_capacity(positions);
    for _ in 0..positions {
        let radius = rng.random_range(6.0..14.0);
        let margin = radius + 2.0;
        let cx = rng.random_range(margin..f64::from(crop.width) - margin);
        let cy = rng.random_range(margin..f64::from(crop.height) - margin);
        rig.with_world(|w| {
            w.place_marker(Marker {
                cx,
                cy,
                radius,
                occluded: false,
            })
        })?;
        let trigger_at = rig.controller.now_ms() + 100;
        let report = rig.controller.run_cycle(trigger_at)?;
        rig.controller.settle();
        let marker = PixelPoint::new(cx, cy);
        let beam = rig.beam().aim_point;
        points.push(SweepPoint {
            marker,
            radius,
            outcome: report.outcome,
            detections: report.detections,
            beam,
            error_px: beam.distance(&marker),
        });
    }

    let aimed = points
        .iter()
        .filter(|p| p.outcome == CycleOutcome::Aimed)
        .count();
    let mean_error_px = points.iter().map(|p| p.error_px).sum::<f64>() / points.len().max(1) as f64;
    let max_error_px = points.iter().map(|p| p.error_px).fold(0.0, f64::max);
    Ok(SweepReport {
        detector,
        seed,
        positions,
        aimed,
        mean_error_px,
        max_error_px,
        sim_ms: rig.controller.now_ms(),
        points,
    })
}
