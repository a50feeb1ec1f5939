//! Detectors for the simulator: a perfect oracle and a dropout wrapper.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sls_core::detection::{BBox, BlobDetector, DetectError, Detection, MarkerDetector};
use sls_core::Frame;

use crate::world::{lock, SharedWorld};

/// Per-frame Bernoulli miss gate. The scenario dropout action and the
/// Monte-Carlo harness both draw from it.
#[derive(Debug, Clone)]
pub struct DropoutGate {
    rng: ChaCha8Rng,
}

impl DropoutGate {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// `true` when this frame's detection is dropped.
    pub fn miss(&mut self, p_miss: f64) -> bool {
        if p_miss <= 0.0 {
            return false;
        }
        if p_miss >= 1.0 {
            return true;
        }
        self.rng.random_bool(p_miss)
    }
}

/// Reports the ground-truth marker center recorded by the camera.
pub struct OracleDetector {
    world: SharedWorld,
}

impl OracleDetector {
    pub fn new(world: SharedWorld) -> Self {
        Self { world }
    }
}

impl MarkerDetector for OracleDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError> {
        let truth = lock(&self.world)
            .truth
            .get(&frame.timestamp_ms)
            .copied()
            .flatten();
        Ok(truth.map(|c| Detection {
            center_x: c.x,
            center_y: c.y,
            confidence: 1.0,
            bbox: BBox {
                x: c.x.floor() as u32,
                y: c.y.floor() as u32,
                w: 1,
                h: 1,
            },
        }))
    }
}

/// Drops detections with the world's current dropout probability.
pub struct DropoutDetector<D> {
    inner: D,
    world: SharedWorld,
    gate: DropoutGate,
}

impl<D: MarkerDetector> DropoutDetector<D> {
    pub fn new(inner: D, world: SharedWorld, seed: u64) -> Self {
        Self {
            inner,
            world,
            gate: DropoutGate::new(seed),
        }
    }
}

impl<D: MarkerDetector> MarkerDetector for DropoutDetector<D> {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError> {
        let detection = self.inner.detect(frame)?;
        let p = lock(&self.world).dropout;
        Ok(if self.gate.miss(p) { None } else { detection })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    /// Ground truth from the renderer.
    Oracle,
    /// The HSV blob detector on rendered frames.
    #[default]
    Reference,
}

impl DetectorKind {
    pub fn build(self, world: SharedWorld, seed: u64) -> Box<dyn MarkerDetector + Send> {
        match self {
            DetectorKind::Oracle => Box::new(DropoutDetector::new(
                OracleDetector::new(world.clone()),
                world,
                seed,
            )),
            DetectorKind::Reference => {
                Box::new(DropoutDetector::new(BlobDetector::default(), world, seed))
            }
        }
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "reference" => Ok(Self::Reference),
            other => Err(format!(
                "unknown detector {other:?} (expected oracle or reference)"
            )),
        }
    }
}
