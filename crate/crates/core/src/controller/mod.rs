//! Trigger-driven controller: capture three frames, detect and average the
//! marker center, map it to pan/tilt angles and drive the servos, with the
//! four signal lights tracking progress.

pub mod adapters;
pub mod fsm;
pub mod report;
pub mod runtime;

pub use adapters::{Camera, HardwareError, LatchedLights, ServoDriver, ServoStatus, SignalPanel};
pub use fsm::{
    lights_for, step, AimSolution, Command, ControllerState, Event, EventKind, LogKind, LogRecord,
    Phase, SignalLights, TimingConfig, FRAMES_PER_TRIGGER,
};
pub use report::{CycleOutcome, CycleReport};
pub use runtime::{
    run_live, Adapters, Controller, LiveInput, Notice, RuntimeError, RuntimeOptions,
};
