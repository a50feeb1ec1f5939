use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::geometry::{CenteredPoint, PanTiltAngles, PixelPoint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleOutcome {
    Aimed,
    NoMarker,
    Fault,
}

/// Everything that happened between one accepted trigger and the end of its cycle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: u32,
    pub trigger_ms: u64,
    pub outcome: CycleOutcome,
    pub capture_ms: u64,
    pub detect_ms: u64,
    pub aim_ms: u64,
    pub total_ms: u64,
    pub capture_commands: u8,
    pub frames_captured: u8,
    pub detections: u8,
    /// Detected center per captured frame, in cropped-image pixels.
    pub per_frame: Vec<Option<PixelPoint>>,
    pub averaged_center: Option<PixelPoint>,
    pub marker_offset: Option<CenteredPoint>,
    pub angles: Option<PanTiltAngles>,
    pub clamped: bool,
    pub fault: Option<String>,
}

impl CycleReport {
    pub(crate) fn started(cycle: u32, trigger_ms: u64) -> Self {
        Self {
            cycle,
            trigger_ms,
            outcome: CycleOutcome::Fault,
            capture_ms: 0,
            detect_ms: 0,
            aim_ms: 0,
            total_ms: 0,
            capture_commands: 0,
            frames_captured: 0,
            detections: 0,
            per_frame: Vec::new(),
            averaged_center: None,
            marker_offset: None,
            angles: None,
            clamped: false,
            fault: None,
        }
    }

    /// Appends the report as one JSON line.
    pub fn write_jsonl(&self, out: &mut impl Write) -> io::Result<()> {
        serde_json::to_writer(&mut *out, self)?;
        out.write_all(b"\n")
    }
}
