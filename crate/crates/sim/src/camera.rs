//! Virtual camera rendering the scene as the sensor would see it.

use serde::{Deserialize, Serialize};
use sls_core::controller::{Camera, HardwareError};
use sls_core::detection::synth::{render, MarkerDisc, MarkerStyle, RenderRequest};
use sls_core::geometry::CropRegion;
use sls_core::Frame;

use crate::world::{lock, Scene, SharedWorld};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraParams {
    pub sensor_width: u32,
    pub sensor_height: u32,
    /// Sensor noise standard deviation at unit illumination, in 8-bit levels.
    pub noise_sigma: f32,
}

impl Default for CameraParams {
    fn default() -> Self {
        Self {
            sensor_width: 640,
            sensor_height: 480,
            noise_sigma: 2.0,
        }
    }
}

/// Renders the crop region of `scene`. Scene coordinates are crop pixels.
pub fn render_frame(scene: &Scene, crop: &CropRegion, noise_sigma: f32, noise_seed: u64) -> Frame {
    render_view(
        scene,
        crop.width,
        crop.height,
        (0.0, 0.0),
        noise_sigma,
        noise_seed,
        0,
    )
}

fn render_view(
    scene: &Scene,
    width: u32,
    height: u32,
    origin: (f64, f64),
    noise_sigma: f32,
    noise_seed: u64,
    timestamp_ms: u64,
) -> Frame {
    let style = MarkerStyle::default();
    render(&RenderRequest {
        width,
        height,
        origin,
        marker: scene.visible_marker().map(|m| MarkerDisc {
            cx: m.cx,
            cy: m.cy,
            radius: m.radius,
        }),
        background: &scene.background,
        style: &style,
        illumination_gain: scene.illumination_gain,
        noise_sigma,
        noise_seed,
        timestamp_ms,
    })
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// [`Camera`] that renders full sensor frames; the calibrated crop maps to
/// scene coordinates starting at zero.
pub struct SimCamera {
    world: SharedWorld,
    params: CameraParams,
}

impl SimCamera {
    pub fn new(world: SharedWorld, params: CameraParams) -> Self {
        Self { world, params }
    }
}

impl Camera for SimCamera {
    fn capture(&mut self, at_ms: u64) -> Result<Frame, HardwareError> {
        let mut world = lock(&self.world);
        let crop = world.crop;
        if !crop.fits_within(self.params.sensor_width, self.params.sensor_height) {
            return Err(HardwareError::new(
                "camera",
                "calibrated crop exceeds the sensor",
            ));
        }
        world.captures += 1;
        let seed = mix(world.seed, world.captures);
        let mut scene = world.scene.clone();
        let visible = world.visible_at(at_ms);
        if visible.is_none() {
            scene.marker = None;
        }
        world.truth.insert(at_ms, visible.map(|m| m.center()));
        drop(world);
        let origin = (-f64::from(crop.start_x), -f64::from(crop.start_y));
        Ok(render_view(
            &scene,
            self.params.sensor_width,
            self.params.sensor_height,
            origin,
            self.params.noise_sigma,
            seed,
            at_ms,
        ))
    }
}
