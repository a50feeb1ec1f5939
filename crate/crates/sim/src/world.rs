//! The simulated operating field, shared by the simulated devices.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use sls_core::detection::synth::Background;
use sls_core::geometry::{CenteredPoint, CropRegion, PixelPoint};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("marker radius must be > 0, got {0}")]
    Radius(f64),
    #[error("marker center ({x}, {y}) lies outside the {width}x{height} crop")]
    OutsideCrop {
        x: f64,
        y: f64,
        width: u32,
        height: u32,
    },
    #[error("illumination gain must be > 0, got {0}")]
    Gain(f32),
    #[error("probability must be within [0, 1], got {0}")]
    Probability(f64),
}

/// Marker position in crop pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Marker {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    #[serde(default)]
    pub occluded: bool,
}

impl Marker {
    pub fn center(&self) -> PixelPoint {
        PixelPoint::new(self.cx, self.cy)
    }

    pub fn validate(&self, crop: &CropRegion) -> Result<(), SceneError> {
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(SceneError::Radius(self.radius));
        }
        let inside = (0.0..=f64::from(crop.width)).contains(&self.cx)
            && (0.0..=f64::from(crop.height)).contains(&self.cy);
        if !inside {
            return Err(SceneError::OutsideCrop {
                x: self.cx,
                y: self.cy,
                width: crop.width,
                height: crop.height,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    pub marker: Option<Marker>,
    pub background: Background,
    pub illumination_gain: f32,
}

impl Default for Scene {
    fn default() -> Self {
        Self {
            marker: None,
            background: Background::plain([170, 60, 55]),
            illumination_gain: 1.0,
        }
    }
}

impl Scene {
    pub fn validate(&self, crop: &CropRegion) -> Result<(), SceneError> {
        if let Some(m) = &self.marker {
            m.validate(crop)?;
        }
        if !(self.illumination_gain.is_finite() && self.illumination_gain > 0.0) {
            return Err(SceneError::Gain(self.illumination_gain));
        }
        Ok(())
    }

    /// The marker if the camera can see it.
    pub fn visible_marker(&self) -> Option<Marker> {
        self.marker.filter(|m| !m.occluded)
    }
}

/// Mutable simulation state behind the device adapters.
#[derive(Debug, Clone)]
pub struct World {
    pub scene: Scene,
    pub crop: CropRegion,
    /// Time until which the marker is hidden, in ms.
    pub occluded_until_ms: u64,
    /// Probability that the detector misses the marker in a frame.
    pub dropout: f64,
    pub seed: u64,
    pub captures: u64,
    /// Ground-truth marker center for every captured frame, by timestamp.
    pub truth: BTreeMap<u64, Option<PixelPoint>>,
    /// Current beam aim offset from the servo-implied point.
    pub aim_offset: CenteredPoint,
}

impl World {
    pub fn new(crop: CropRegion, seed: u64) -> Self {
        Self {
            scene: Scene::default(),
            crop,
            occluded_until_ms: 0,
            dropout: 0.0,
            seed,
            captures: 0,
            truth: BTreeMap::new(),
            aim_offset: CenteredPoint::new(0.0, 0.0),
        }
    }

    /// The marker as the camera sees it at `at_ms`.
    pub fn visible_at(&self, at_ms: u64) -> Option<Marker> {
        if at_ms < self.occluded_until_ms {
            return None;
        }
        self.scene.visible_marker()
    }

    pub fn place_marker(&mut self, marker: Marker) -> Result<(), SceneError> {
        marker.validate(&self.crop)?;
        self.scene.marker = Some(marker);
        Ok(())
    }

    pub fn remove_marker(&mut self) {
        self.scene.marker = None;
    }

    pub fn occlude(&mut self, from_ms: u64, duration_ms: u64) {
        self.occluded_until_ms = self.occluded_until_ms.max(from_ms + duration_ms);
    }

    pub fn set_dropout(&mut self, p: f64) -> Result<(), SceneError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(SceneError::Probability(p));
        }
        self.dropout = p;
        Ok(())
    }
}

pub type SharedWorld = Arc<Mutex<World>>;

pub fn shared(world: World) -> SharedWorld {
    Arc::new(Mutex::new(world))
}

pub(crate) fn lock(world: &SharedWorld) -> MutexGuard<'_, World> {
    world
        .lock()
        .unwrap_or_else(|poisoned| poisoned.into_inner())
}
