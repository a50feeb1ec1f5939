//! Simulated rig for the surgical light controller: a virtual camera,
//! servos and operating field around the real controller, plus scripted
//! scenarios and statistical harnesses.

pub mod camera;
pub mod detectors;
pub mod montecarlo;
pub mod rig;
pub mod scenario;
pub mod servo;
pub mod sweep;
pub mod world;

pub use camera::{render_frame, CameraParams, SimCamera};
pub use detectors::{DetectorKind, DropoutDetector, DropoutGate, OracleDetector};
pub use montecarlo::{miss_probability_closed_form, miss_probability_mc, MissEstimate};
pub use rig::{beam_point, BeamState, Rig, RigConfig, RigError};
pub use scenario::{
    bundled, run_scenario, Action, ScenarioError, ScenarioReport, ScenarioScript, Step, Transport,
    BUNDLED,
};
pub use servo::{
    angle_to_pulse, servo_step, PulseError, ServoDynamics, ServoModel, ServoParams, SimServo,
};
pub use sweep::{closed_loop_sweep, SweepPoint, SweepReport};
pub use world::{shared, Marker, Scene, SceneError, SharedWorld, World};
