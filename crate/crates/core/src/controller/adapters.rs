//! Hardware seams. Simulated implementations live in the simulation crate;
//! real drivers (camera, PCA9685 servo board, relay-driven lights) would
//! implement the same traits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::fsm::SignalLights;
use crate::frame::Frame;
use crate::geometry::PanTiltAngles;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{device}: {message}")]
pub struct HardwareError {
    pub device: &'static str,
    pub message: String,
}

impl HardwareError {
    pub fn new(device: &'static str, message: impl Into<String>) -> Self {
        Self {
            device,
            message: message.into(),
        }
    }
}

pub trait Camera {
    /// Captures a full sensor frame stamped with `at_ms`.
    fn capture(&mut self, at_ms: u64) -> Result<Frame, HardwareError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServoStatus {
    pub current: PanTiltAngles,
    /// Close enough to the target to report the aim as reached.
    pub reached: bool,
    /// Exactly at the target; no further motion pending.
    pub settled: bool,
}

pub trait ServoDriver {
    fn set_target(&mut self, target: PanTiltAngles) -> Result<(), HardwareError>;
    /// Advances the servos by `dt_s` seconds.
    fn step(&mut self, dt_s: f64) -> Result<ServoStatus, HardwareError>;
    fn current(&self) -> PanTiltAngles;
}

pub trait SignalPanel {
    fn set(&mut self, lights: SignalLights) -> Result<(), HardwareError>;
}

impl<T: Camera + ?Sized> Camera for Box<T> {
    fn capture(&mut self, at_ms: u64) -> Result<Frame, HardwareError> {
        (**self).capture(at_ms)
    }
}

impl<T: ServoDriver + ?Sized> ServoDriver for Box<T> {
    fn set_target(&mut self, target: PanTiltAngles) -> Result<(), HardwareError> {
        (**self).set_target(target)
    }

    fn step(&mut self, dt_s: f64) -> Result<ServoStatus, HardwareError> {
        (**self).step(dt_s)
    }

    fn current(&self) -> PanTiltAngles {
        (**self).current()
    }
}

impl<T: SignalPanel + ?Sized> SignalPanel for Box<T> {
    fn set(&mut self, lights: SignalLights) -> Result<(), HardwareError> {
        (**self).set(lights)
    }
}

/// Signal panel that only remembers the last state.
#[derive(Debug, Default, Clone)]
pub struct LatchedLights {
    pub current: SignalLights,
}

impl SignalPanel for LatchedLights {
    fn set(&mut self, lights: SignalLights) -> Result<(), HardwareError> {
        self.current = lights;
        Ok(())
    }
}
