//! Slew-limited model of the two hobby servos and their PWM pulse mapping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sls_core::controller::{HardwareError, ServoDriver, ServoStatus};
use sls_core::geometry::{CenteredPoint, PanTiltAngles};
use thiserror::Error;

use crate::world::{lock, SharedWorld};

/// Both axes within this many degrees of target count as reached.
pub const REACHED_TOLERANCE_DEG: f64 = 0.1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PulseError {
    #[error("angle {theta} outside servo range [{min}, {max}]")]
    OutOfRange { theta: f64, min: f64, max: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoParams {
    pub servo_min: f64,
    pub servo_max: f64,
    /// Degrees per second.
    pub slew_rate: f64,
    /// Pulse width in microseconds at `servo_min`.
    pub pulse_min: f64,
    /// Pulse width in microseconds at `servo_max`.
    pub pulse_max: f64,
}

impl Default for ServoParams {
    fn default() -> Self {
        Self {
            servo_min: 0.0,
            servo_max: 180.0,
            slew_rate: 315.0,
            pulse_min: 500.0,
            pulse_max: 2500.0,
        }
    }
}

/// The configurable part of [`ServoParams`]; the angle range comes from the
/// calibration profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServoDynamics {
    pub slew_rate: f64,
    pub pulse_min: f64,
    pub pulse_max: f64,
}

impl Default for ServoDynamics {
    fn default() -> Self {
        let p = ServoParams::default();
        Self {
            slew_rate: p.slew_rate,
            pulse_min: p.pulse_min,
            pulse_max: p.pulse_max,
        }
    }
}

impl ServoParams {
    pub fn with_range(dynamics: ServoDynamics, servo_min: f64, servo_max: f64) -> Self {
        Self {
            servo_min,
            servo_max,
            slew_rate: dynamics.slew_rate,
            pulse_min: dynamics.pulse_min,
            pulse_max: dynamics.pulse_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoModel {
    pub params: ServoParams,
    pub current: PanTiltAngles,
    pub target: PanTiltAngles,
}

impl ServoModel {
    pub fn new(params: ServoParams, start: PanTiltAngles) -> Self {
        let mut m = Self {
            params,
            current: start,
            target: start,
        };
        m.current = m.clamp(start);
        m.target = m.current;
        m
    }

    fn clamp(&self, a: PanTiltAngles) -> PanTiltAngles {
        let c = |v: f64| v.clamp(self.params.servo_min, self.params.servo_max);
        PanTiltAngles::new(c(a.theta_x), c(a.theta_y))
    }

    /// Sets the target, clamped to the servo range.
    pub fn set_target(&mut self, target: PanTiltAngles) {
        self.target = self.clamp(target);
    }

    pub fn reached(&self) -> bool {
        (self.current.theta_x - self.target.theta_x).abs() <= REACHED_TOLERANCE_DEG
            && (self.current.theta_y - self.target.theta_y).abs() <= REACHED_TOLERANCE_DEG
    }

    pub fn pulses(&self) -> Result<(f64, f64), PulseError> {
        Ok((
            angle_to_pulse(self.current.theta_x, &self.params)?,
            angle_to_pulse(self.current.theta_y, &self.params)?,
        ))
    }
}

/// Moves each axis toward its target by at most `slew_rate * dt_s` degrees.
pub fn servo_step(model: &ServoModel, dt_s: f64) -> ServoModel {
    let max = model.params.slew_rate * dt_s.max(0.0);
    let mv = |c: f64, t: f64| {
        if (t - c).abs() <= max {
            t
        } else {
            c + max.copysign(t - c)
        }
    };
    ServoModel {
        current: PanTiltAngles::new(
            mv(model.current.theta_x, model.target.theta_x),
            mv(model.current.theta_y, model.target.theta_y),
        ),
        ..*model
    }
}

/// Affine map from angle to PWM pulse width in microseconds.
pub fn angle_to_pulse(theta: f64, params: &ServoParams) -> Result<f64, PulseError> {
    if !(params.servo_min..=params.servo_max).contains(&theta) {
        return Err(PulseError::OutOfRange {
            theta,
            min: params.servo_min,
            max: params.servo_max,
        });
    }
    let t = (theta - params.servo_min) / (params.servo_max - params.servo_min);
    Ok(params.pulse_min + t * (params.pulse_max - params.pulse_min))
}

/// [`ServoDriver`] backed by [`ServoModel`]. Each new target also draws the
/// beam's aim noise into the shared world.
pub struct SimServo {
    model: ServoModel,
    world: SharedWorld,
    aim_noise: Option<(Normal<f64>, ChaCha8Rng)>,
}

impl SimServo {
    /// `aim_noise_px` is the standard deviation of the beam aim error per axis.
    pub fn new(model: ServoModel, world: SharedWorld, aim_noise_px: f64, seed: u64) -> Self {
        let aim_noise = (aim_noise_px > 0.0).then(|| {
            (
                Normal::new(0.0, aim_noise_px).expect("finite sigma"),
                ChaCha8Rng::seed_from_u64(seed ^ 0xA1A1),
            )
        });
        Self {
            model,
            world,
            aim_noise,
        }
    }

    pub fn model(&self) -> &ServoModel {
        &self.model
    }
}

impl ServoDriver for SimServo {
    fn set_target(&mut self, target: PanTiltAngles) -> Result<(), HardwareError> {
        self.model.set_target(target);
        if let Some((dist, rng)) = self.aim_noise.as_mut() {
            let offset = CenteredPoint::new(dist.sample(rng), dist.sample(rng));
            lock(&self.world).aim_offset = offset;
        }
        Ok(())
    }

    fn step(&mut self, dt_s: f64) -> Result<ServoStatus, HardwareError> {
        self.model = servo_step(&self.model, dt_s);
        self.model
            .pulses()
            .map_err(|e| HardwareError::new("servo", e.to_string()))?;
        Ok(ServoStatus {
            current: self.model.current,
            reached: self.model.reached(),
            settled: self.model.current == self.model.target,
        })
    }

    fn current(&self) -> PanTiltAngles {
        self.model.current
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(current: f64, target: f64, slew: f64) -> ServoModel {
        let mut m = ServoModel::new(
            ServoParams {
                slew_rate: slew,
                ..ServoParams::default()
            },
            PanTiltAngles::new(current, current),
        );
        m.set_target(PanTiltAngles::new(target, target));
        m
    }

    #[test]
    fn rate_limited_step() {
        let m = servo_step(&model(90.0, 60.0, 60.0), 0.25);
        assert_eq!(m.current, PanTiltAngles::new(75.0, 75.0));
        assert!(!m.reached());
    }

    #[test]
    fn at_target_is_fixpoint() {
        let m = model(90.0, 90.0, 60.0);
        let n = servo_step(&m, 0.1);
        assert_eq!(n.current, m.current);
        assert!(n.reached());
    }

    #[test]
    fn target_clamped_to_range() {
        let m = model(170.0, 200.0, 315.0);
        assert_eq!(m.target.theta_x, 180.0);
        let n = servo_step(&m, 1.0);
        assert_eq!(n.current.theta_x, 180.0);
        assert!(n.reached());
    }

    #[test]
    fn pulse_endpoints() {
        let p = ServoParams::default();
        assert_eq!(angle_to_pulse(0.0, &p), Ok(500.0));
        assert_eq!(angle_to_pulse(90.0, &p), Ok(1500.0));
        assert_eq!(angle_to_pulse(180.0, &p), Ok(2500.0));
        assert!(matches!(
            angle_to_pulse(-0.1, &p),
            Err(PulseError::OutOfRange { .. })
        ));
        assert!(matches!(
            angle_to_pulse(180.5, &p),
            Err(PulseError::OutOfRange { .. })
        ));
    }
}
