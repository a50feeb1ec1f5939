//! Full simulated device: controller wired to the virtual camera, detector,
//! servos and signal lights over one shared world.

use serde::{Deserialize, Serialize};
use sls_core::controller::{
    Adapters, Controller, LatchedLights, RuntimeError, RuntimeOptions, TimingConfig,
};
use sls_core::geometry::{
    invert_pan_tilt, uncenter, CalibrationProfile, CenteredPoint, PanTiltAngles, PixelPoint,
};
use thiserror::Error;

use crate::camera::{CameraParams, SimCamera};
use crate::detectors::DetectorKind;
use crate::servo::{ServoDynamics, ServoModel, ServoParams, SimServo};
use crate::world::{lock, shared, Scene, SceneError, SharedWorld, World};

#[derive(Debug, Error)]
pub enum RigError {
    #[error("invalid rig configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Runtime(#[from] RuntimeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub calibration: CalibrationProfile,
    pub timing: TimingConfig,
    pub camera: CameraParams,
    pub servo: ServoDynamics,
    pub detector: DetectorKind,
    /// Standard deviation of the beam aim error per axis, in crop pixels.
    pub aim_noise_px: f64,
    /// Radius of the lit spot, in crop pixels. Reported only.
    pub spot_radius_px: f64,
    pub seed: u64,
    pub scene: Scene,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationProfile::default_profile(),
            timing: TimingConfig::simulation(),
            camera: CameraParams::default(),
            servo: ServoDynamics::default(),
            detector: DetectorKind::Reference,
            aim_noise_px: 0.0,
            spot_radius_px: 40.0,
            seed: 0,
            scene: Scene::default(),
        }
    }
}

/// Where the light points, in crop pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamState {
    pub aim_point: PixelPoint,
    pub spot_radius: f64,
    pub angles: PanTiltAngles,
}

/// Beam aim point implied by servo angles: the inverse of the pixel-to-angle
/// mapping plus an optional aim offset.
pub fn beam_point(
    angles: PanTiltAngles,
    cal: &CalibrationProfile,
    offset: CenteredPoint,
) -> PixelPoint {
    let centered = invert_pan_tilt(angles, cal).expect("validated profile is invertible");
    let p = uncenter(centered, &cal.crop);
    PixelPoint::new(p.x + offset.x, p.y + offset.y)
}

pub struct Rig {
    pub controller: Controller,
    world: SharedWorld,
    config: RigConfig,
}

impl Rig {
    pub fn new(config: RigConfig) -> Result<Self, RigError> {
        let cal = config.calibration;
        cal.validate()
            .map_err(|e| RigError::Config(e.to_string()))?;
        if !cal
            .crop
            .fits_within(config.camera.sensor_width, config.camera.sensor_height)
        {
            return Err(RigError::Config(format!(
                "crop {}x{} at ({}, {}) does not fit the {}x{} sensor",
                cal.crop.width,
                cal.crop.height,
                cal.crop.start_x,
                cal.crop.start_y,
                config.camera.sensor_width,
                config.camera.sensor_height
            )));
        }
        if !(config.servo.slew_rate.is_finite() && config.servo.slew_rate > 0.0) {
            return Err(RigError::Config("servo slew_rate must be > 0".into()));
        }
        if !(config.aim_noise_px.is_finite() && config.aim_noise_px >= 0.0) {
            return Err(RigError::Config("aim_noise_px must be >= 0".into()));
        }
        config.scene.validate(&cal.crop)?;

        let mut world = World::new(cal.crop, config.seed);
        world.scene = config.scene.clone();
        let world = shared(world);
        let servo = ServoModel::new(
            ServoParams::with_range(config.servo, cal.servo_min, cal.servo_max),
            cal.reference_angles(),
        );
        let adapters = Adapters {
            camera: Box::new(SimCamera::new(world.clone(), config.camera)),
            detector: config.detector.build(world.clone(), config.seed ^ 0xD7),
            servo: Box::new(SimServo::new(
                servo,
                world.clone(),
                config.aim_noise_px,
                config.seed,
            )),
            lights: Box::new(LatchedLights::default()),
        };
        let controller = Controller::new(cal, config.timing, adapters, RuntimeOptions::default())?;
        Ok(Self {
            controller,
            world,
            config,
        })
    }

    pub fn config(&self) -> &RigConfig {
        &self.config
    }

    pub fn world(&self) -> &SharedWorld {
        &self.world
    }

    pub fn with_world<R>(&self, f: impl FnOnce(&mut World) -> R) -> R {
        f(&mut lock(&self.world))
    }

    pub fn beam(&self) -> BeamState {
        let angles = self.controller.servo_angles();
        let offset = lock(&self.world).aim_offset;
        BeamState {
            aim_point: beam_point(angles, &self.config.calibration, offset),
            spot_radius: self.config.spot_radius_px,
            angles,
        }
    }

    /// Distance from the beam aim point to the marker, if one is placed.
    pub fn beam_error_px(&self) -> Option<f64> {
        let marker = lock(&self.world).scene.marker?;
        Some(self.beam().aim_point.distance(&marker.center()))
    }
}
