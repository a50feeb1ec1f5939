//! Core of the vision-guided surgical light: pixel-to-angle geometry,
//! marker detection, and the trigger-driven controller.

pub mod calibration;
pub mod controller;
pub mod detection;
pub mod frame;
pub mod geometry;

pub use calibration::{load_calibration, load_calibration_file, CalibrationError};
pub use frame::Frame;
pub use geometry::{
    average_centers, compute_pan_tilt, correct_marker_coords, invert_pan_tilt, CalibrationProfile,
    CenteredPoint, CropRegion, GeometryError, PanTiltAngles, PanTiltSolution, PixelPoint,
};
