//! The device workflow as a pure transition function.
//!
//! ```text
//! Off          --PowerOn-------------------------> Initializing   lights: red
//! Initializing --InitDone------------------------> Ready          lights: off
//! Ready/Aimed  --TriggerOn-----------------------> Capturing      lights: yellow, 3x CaptureFrame
//! Capturing    --3rd FrameCaptured / window end--> Detecting      lights: blue
//! Detecting    --DetectionDone-------------------> Aiming         MoveServos (blue stays on)
//! Detecting    --DetectionFailed-----------------> Ready          lights: off, no_marker
//! Aiming       --AimReached----------------------> Aimed          lights: green (latched)
//! any powered  --HardwareFault-------------------> Fault          lights: red
//! Fault        --PowerOn-------------------------> Initializing
//! ```
//!
//! Anything else is absorbed: the state is unchanged and a `LogEvent` is
//! emitted. `TriggerOff` and stale capture-window timers are absorbed
//! silently. Side effects only ever leave through the returned commands.

use serde::{Deserialize, Serialize};

use crate::geometry::{PanTiltAngles, PanTiltSolution, PixelPoint};

/// Frames captured per trigger.
pub const FRAMES_PER_TRIGGER: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Before power-up.
    Off,
    Initializing,
    Ready,
    Capturing,
    Detecting,
    Aiming,
    Aimed,
    Fault,
}

impl Phase {
    pub const ALL: [Phase; 8] = [
        Phase::Off,
        Phase::Initializing,
        Phase::Ready,
        Phase::Capturing,
        Phase::Detecting,
        Phase::Aiming,
        Phase::Aimed,
        Phase::Fault,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SignalLights {
    pub red: bool,
    pub yellow: bool,
    pub blue: bool,
    pub green: bool,
}

impl SignalLights {
    pub const OFF: SignalLights = SignalLights {
        red: false,
        yellow: false,
        blue: false,
        green: false,
    };
    pub const RED: SignalLights = SignalLights {
        red: true,
        ..Self::OFF
    };
    pub const YELLOW: SignalLights = SignalLights {
        yellow: true,
        ..Self::OFF
    };
    pub const BLUE: SignalLights = SignalLights {
        blue: true,
        ..Self::OFF
    };
    pub const GREEN: SignalLights = SignalLights {
        green: true,
        ..Self::OFF
    };

    pub fn lit_count(&self) -> usize {
        [self.red, self.yellow, self.blue, self.green]
            .iter()
            .filter(|&&on| on)
            .count()
    }

    pub fn name(&self) -> &'static str {
        match (self.red, self.yellow, self.blue, self.green) {
            (false, false, false, false) => "off",
            (true, false, false, false) => "red",
            (false, true, false, false) => "yellow",
            (false, false, true, false) => "blue",
            (false, false, false, true) => "green",
            _ => "mixed",
        }
    }
}

pub fn lights_for(phase: Phase) -> SignalLights {
    match phase {
        Phase::Off | Phase::Ready => SignalLights::OFF,
        Phase::Initializing | Phase::Fault => SignalLights::RED,
        Phase::Capturing => SignalLights::YELLOW,
        Phase::Detecting | Phase::Aiming => SignalLights::BLUE,
        Phase::Aimed => SignalLights::GREEN,
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
#[error("invalid timing: {0}")]
pub struct TimingError(pub String);

/// Phase durations, in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    pub init_duration: f64,
    pub capture_window: f64,
    pub detect_budget: f64,
    pub frames_per_trigger: u8,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            init_duration: 20.0,
            capture_window: 5.0,
            detect_budget: 3.0,
            frames_per_trigger: FRAMES_PER_TRIGGER,
        }
    }
}

impl TimingConfig {
    /// Defaults with the initialization collapsed to 0.1 s.
    pub fn simulation() -> Self {
        Self {
            init_duration: 0.1,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), TimingError> {
        for (name, v) in [
            ("init_duration", self.init_duration),
            ("capture_window", self.capture_window),
            ("detect_budget", self.detect_budget),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(TimingError(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.frames_per_trigger != FRAMES_PER_TRIGGER {
            return Err(TimingError(format!(
                "frames_per_trigger is fixed at {FRAMES_PER_TRIGGER}"
            )));
        }
        Ok(())
    }

    pub fn init_ms(&self) -> u64 {
        secs_to_ms(self.init_duration)
    }

    pub fn capture_ms(&self) -> u64 {
        secs_to_ms(self.capture_window)
    }

    pub fn detect_ms(&self) -> u64 {
        secs_to_ms(self.detect_budget)
    }

    /// Offsets of the frame captures from the trigger, spread evenly so the
    /// last one lands at the end of the capture window.
    pub fn frame_offsets_ms(&self) -> [u64; FRAMES_PER_TRIGGER as usize] {
        let window = self.capture_ms();
        let n = u64::from(FRAMES_PER_TRIGGER);
        [1, 2, 3].map(|i| window * i / n)
    }
}

fn secs_to_ms(s: f64) -> u64 {
    (s * 1000.0).round().max(1.0) as u64
}

/// Result of detection and mapping, computed by the runtime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AimSolution {
    pub detections: u8,
    pub center: PixelPoint,
    pub solution: PanTiltSolution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    PowerOn,
    InitDone,
    TriggerOn,
    TriggerOff,
    FrameCaptured { index: u8 },
    CaptureWindowElapsed { cycle: u32 },
    DetectionDone(AimSolution),
    DetectionFailed { detections: u8 },
    AimReached,
    HardwareFault { reason: String },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PowerOn => "power_on",
            EventKind::InitDone => "init_done",
            EventKind::TriggerOn => "trigger_on",
            EventKind::TriggerOff => "trigger_off",
            EventKind::FrameCaptured { .. } => "frame_captured",
            EventKind::CaptureWindowElapsed { .. } => "capture_window_elapsed",
            EventKind::DetectionDone(_) => "detection_done",
            EventKind::DetectionFailed { .. } => "detection_failed",
            EventKind::AimReached => "aim_reached",
            EventKind::HardwareFault { .. } => "hardware_fault",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at_ms: u64,
    pub kind: EventKind,
}

impl Event {
    pub fn new(at_ms: u64, kind: EventKind) -> Self {
        Self { at_ms, kind }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogKind {
    Ignored,
    Stale,
    Ready,
    NoMarker,
    Clamped,
    Aimed,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub at_ms: u64,
    pub kind: LogKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    SetLights(SignalLights),
    ArmInitTimer { at_ms: u64 },
    StartCapture { cycle: u32, deadline_ms: u64 },
    CaptureFrame { index: u8, at_ms: u64 },
    RunDetection { frames: u8, deadline_ms: u64 },
    MoveServos(PanTiltAngles),
    LogEvent(LogRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    pub entered_at_ms: u64,
    pub last_result: Option<PanTiltAngles>,
    /// Number of accepted triggers so far; identifies the current cycle.
    pub cycle: u32,
    /// Bit `i` set once frame `i` of the current cycle arrived.
    pub captured: u8,
}

impl Default for ControllerState {
    fn default() -> Self {
        Self {
            phase: Phase::Off,
            entered_at_ms: 0,
            last_result: None,
            cycle: 0,
            captured: 0,
        }
    }
}

impl ControllerState {
    pub fn frames_captured(&self) -> u8 {
        self.captured.count_ones() as u8
    }

    pub fn lights(&self) -> SignalLights {
        lights_for(self.phase)
    }

    fn enter(&self, phase: Phase, at_ms: u64) -> ControllerState {
        ControllerState {
            phase,
            entered_at_ms: at_ms,
            ..self.clone()
        }
    }
}

fn log(at_ms: u64, kind: LogKind, detail: impl Into<String>) -> Command {
    Command::LogEvent(LogRecord {
        at_ms,
        kind,
        detail: detail.into(),
    })
}

fn ignored(state: &ControllerState, event: &Event) -> (ControllerState, Vec<Command>) {
    let detail = format!("{} ignored in {:?}", event.kind.name(), state.phase);
    (
        state.clone(),
        vec![log(event.at_ms, LogKind::Ignored, detail)],
    )
}

fn start_cycle(
    state: &ControllerState,
    t: u64,
    cfg: &TimingConfig,
) -> (ControllerState, Vec<Command>) {
    let cycle = state.cycle + 1;
    let next = ControllerState {
        cycle,
        captured: 0,
        ..state.enter(Phase::Capturing, t)
    };
    let mut commands = vec![
        Command::SetLights(SignalLights::YELLOW),
        Command::StartCapture {
            cycle,
            deadline_ms: t + cfg.capture_ms(),
        },
    ];
    commands.extend(cfg.frame_offsets_ms().iter().enumerate().map(|(i, off)| {
        Command::CaptureFrame {
            index: i as u8,
            at_ms: t + off,
        }
    }));
    (next, commands)
}

fn start_detection(
    state: &ControllerState,
    t: u64,
    cfg: &TimingConfig,
) -> (ControllerState, Vec<Command>) {
    let next = state.enter(Phase::Detecting, t);
    let frames = state.frames_captured();
    (
        next,
        vec![
            Command::SetLights(SignalLights::BLUE),
            Command::RunDetection {
                frames,
                deadline_ms: t + cfg.detect_ms(),
            },
        ],
    )
}

/// Pure transition function.
pub fn step(
    state: &ControllerState,
    event: &Event,
    cfg: &TimingConfig,
) -> (ControllerState, Vec<Command>) {
    use EventKind as E;
    use Phase as P;
    let t = event.at_ms;

    if t < state.entered_at_ms {
        let detail = format!(
            "{} at {t} ms precedes phase entry at {} ms",
            event.kind.name(),
            state.entered_at_ms
        );
        return (state.clone(), vec![log(t, LogKind::Stale, detail)]);
    }

    match (state.phase, &event.kind) {
        (P::Off | P::Fault, E::PowerOn) => (
            ControllerState {
                captured: 0,
                ..state.enter(P::Initializing, t)
            },
            vec![
                Command::SetLights(SignalLights::RED),
                Command::ArmInitTimer {
                    at_ms: t + cfg.init_ms(),
                },
            ],
        ),
        (P::Initializing, E::InitDone) => (
            state.enter(P::Ready, t),
            vec![
                Command::SetLights(SignalLights::OFF),
                log(t, LogKind::Ready, "initialization complete"),
            ],
        ),

        (P::Ready | P::Aimed, E::TriggerOn) => start_cycle(state, t, cfg),
        (_, E::TriggerOff) => (state.clone(), Vec::new()),

        (P::Capturing, E::FrameCaptured { index }) => {
            let bit = 1u8.checked_shl(u32::from(*index)).unwrap_or(0);
            if *index >= FRAMES_PER_TRIGGER || state.captured & bit != 0 {
                return ignored(state, event);
            }
            let next = ControllerState {
                captured: state.captured | bit,
                ..state.clone()
            };
            if next.frames_captured() == FRAMES_PER_TRIGGER {
                start_detection(&next, t, cfg)
            } else {
                (next, Vec::new())
            }
        }
        (P::Capturing, E::CaptureWindowElapsed { cycle }) if *cycle == state.cycle => {
            start_detection(state, t, cfg)
        }
        // Stale window timer from a cycle that already moved on.
        (_, E::CaptureWindowElapsed { .. }) => (state.clone(), Vec::new()),

        (P::Detecting, E::DetectionDone(aim)) => {
            let mut next = state.enter(P::Aiming, t);
            next.last_result = Some(aim.solution.angles);
            let mut commands = vec![Command::MoveServos(aim.solution.angles)];
            if aim.solution.clamped {
                let u = aim.solution.unclamped;
                commands.push(log(
                    t,
                    LogKind::Clamped,
                    format!("requested ({:.3}, {:.3}) clamped", u.theta_x, u.theta_y),
                ));
            }
            (next, commands)
        }
        (P::Detecting, E::DetectionFailed { detections }) => (
            state.enter(P::Ready, t),
            vec![
                Command::SetLights(SignalLights::OFF),
                log(
                    t,
                    LogKind::NoMarker,
                    format!(
                        "no_marker: {detections} detections in {} frames",
                        state.frames_captured()
                    ),
                ),
            ],
        ),
        (P::Aiming, E::AimReached) => (
            state.enter(P::Aimed, t),
            vec![
                Command::SetLights(SignalLights::GREEN),
                log(t, LogKind::Aimed, "servos positioned"),
            ],
        ),

        (P::Off | P::Fault, E::HardwareFault { .. }) => ignored(state, event),
        (_, E::HardwareFault { reason }) => (
            state.enter(P::Fault, t),
            vec![
                Command::SetLights(SignalLights::RED),
                log(t, LogKind::Fault, reason.clone()),
            ],
        ),

        _ => ignored(state, event),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{compute_pan_tilt, CalibrationProfile, CenteredPoint};

    fn cfg() -> TimingConfig {
        TimingConfig::default()
    }

    fn at(phase: Phase) -> ControllerState {
        ControllerState {
            phase,
            ..ControllerState::default()
        }
    }

    fn aim() -> AimSolution {
        let cal = CalibrationProfile::default_profile();
        AimSolution {
            detections: 3,
            center: PixelPoint::new(320.0, 240.0),
            solution: compute_pan_tilt(CenteredPoint::new(0.0, 0.0), &cal),
        }
    }

    fn non_log(cmds: &[Command]) -> Vec<Command> {
        cmds.iter()
            .filter(|c| !matches!(c, Command::LogEvent(_)))
            .cloned()
            .collect()
    }

    #[test]
    fn trigger_in_ready_starts_capture() {
        let (s, cmds) = step(
            &at(Phase::Ready),
            &Event::new(100, EventKind::TriggerOn),
            &cfg(),
        );
        assert_eq!(s.phase, Phase::Capturing);
        assert_eq!(s.cycle, 1);
        assert_eq!(
            cmds[..2],
            [
                Command::SetLights(SignalLights::YELLOW),
                Command::StartCapture {
                    cycle: 1,
                    deadline_ms: 5100
                }
            ]
        );
        let frames: Vec<_> = cmds[2..].to_vec();
        assert_eq!(
            frames,
            vec![
                Command::CaptureFrame {
                    index: 0,
                    at_ms: 1766
                },
                Command::CaptureFrame {
                    index: 1,
                    at_ms: 3433
                },
                Command::CaptureFrame {
                    index: 2,
                    at_ms: 5100
                },
            ]
        );
    }

    #[test]
    fn retrigger_while_capturing_is_logged_noop() {
        let s = ControllerState {
            phase: Phase::Capturing,
            cycle: 1,
            ..Default::default()
        };
        let (next, cmds) = step(&s, &Event::new(10, EventKind::TriggerOn), &cfg());
        assert_eq!(next, s);
        assert!(matches!(
            &cmds[..],
            [Command::LogEvent(LogRecord {
                kind: LogKind::Ignored,
                ..
            })]
        ));
    }

    #[test]
    fn detection_failure_returns_to_ready_without_moving() {
        let (s, cmds) = step(
            &at(Phase::Detecting),
            &Event::new(0, EventKind::DetectionFailed { detections: 0 }),
            &cfg(),
        );
        assert_eq!(s.phase, Phase::Ready);
        assert_eq!(cmds[0], Command::SetLights(SignalLights::OFF));
        assert!(matches!(
            &cmds[1],
            Command::LogEvent(LogRecord {
                kind: LogKind::NoMarker,
                ..
            })
        ));
        assert!(!cmds.iter().any(|c| matches!(c, Command::MoveServos(_))));
    }

    #[test]
    fn lights_mapping() {
        assert_eq!(lights_for(Phase::Initializing), SignalLights::RED);
        assert_eq!(lights_for(Phase::Detecting), SignalLights::BLUE);
        assert_eq!(lights_for(Phase::Fault), SignalLights::RED);
        assert_eq!(lights_for(Phase::Aimed), SignalLights::GREEN);
        for p in Phase::ALL {
            assert!(lights_for(p).lit_count() <= 1);
        }
    }

    #[test]
    fn full_cycle_light_sequence() {
        let c = cfg();
        let mut s = ControllerState::default();
        let mut lights = Vec::new();
        let mut feed = |s: &mut ControllerState, e: Event| {
            let (n, cmds) = step(s, &e, &c);
            *s = n;
            lights.extend(cmds.into_iter().filter_map(|c| match c {
                Command::SetLights(l) => Some(l.name()),
                _ => None,
            }));
        };
        feed(&mut s, Event::new(0, EventKind::PowerOn));
        feed(&mut s, Event::new(20_000, EventKind::InitDone));
        feed(&mut s, Event::new(21_000, EventKind::TriggerOn));
        for i in 0..3 {
            feed(
                &mut s,
                Event::new(22_000 + u64::from(i), EventKind::FrameCaptured { index: i }),
            );
        }
        assert_eq!(s.phase, Phase::Detecting);
        feed(&mut s, Event::new(25_000, EventKind::DetectionDone(aim())));
        feed(&mut s, Event::new(25_500, EventKind::AimReached));
        assert_eq!(s.phase, Phase::Aimed);
        assert_eq!(s.last_result, Some(PanTiltAngles::new(90.0, 90.0)));
        assert_eq!(lights, vec!["red", "off", "yellow", "blue", "green"]);
    }

    #[test]
    fn window_elapse_detects_with_partial_frames() {
        let s = ControllerState {
            phase: Phase::Capturing,
            cycle: 4,
            captured: 0b001,
            ..Default::default()
        };
        let (n, cmds) = step(
            &s,
            &Event::new(5, EventKind::CaptureWindowElapsed { cycle: 4 }),
            &cfg(),
        );
        assert_eq!(n.phase, Phase::Detecting);
        assert!(cmds.contains(&Command::RunDetection {
            frames: 1,
            deadline_ms: 3005
        }));
        // A window timer from an older cycle does nothing.
        let (n, cmds) = step(
            &s,
            &Event::new(5, EventKind::CaptureWindowElapsed { cycle: 3 }),
            &cfg(),
        );
        assert_eq!((n, cmds), (s, vec![]));
    }

    #[test]
    fn duplicate_or_out_of_range_frames_are_ignored() {
        let s = ControllerState {
            phase: Phase::Capturing,
            cycle: 1,
            captured: 0b010,
            ..Default::default()
        };
        for index in [1, 3, 200] {
            let (n, cmds) = step(
                &s,
                &Event::new(5, EventKind::FrameCaptured { index }),
                &cfg(),
            );
            assert_eq!(n, s);
            assert_eq!(cmds.len(), 1);
        }
    }

    #[test]
    fn faults_and_recovery() {
        let (s, cmds) = step(
            &at(Phase::Aiming),
            &Event::new(
                1,
                EventKind::HardwareFault {
                    reason: "servo".into(),
                },
            ),
            &cfg(),
        );
        assert_eq!(s.phase, Phase::Fault);
        assert_eq!(cmds[0], Command::SetLights(SignalLights::RED));
        let (s, _) = step(&s, &Event::new(2, EventKind::TriggerOn), &cfg());
        assert_eq!(s.phase, Phase::Fault);
        let (s, _) = step(&s, &Event::new(3, EventKind::PowerOn), &cfg());
        assert_eq!(s.phase, Phase::Initializing);
    }

    #[test]
    fn events_before_phase_entry_are_stale() {
        let s = ControllerState {
            phase: Phase::Ready,
            entered_at_ms: 100,
            ..Default::default()
        };
        let (n, cmds) = step(&s, &Event::new(50, EventKind::TriggerOn), &cfg());
        assert_eq!(n, s);
        assert!(matches!(
            &cmds[..],
            [Command::LogEvent(LogRecord {
                kind: LogKind::Stale,
                ..
            })]
        ));
    }

    #[test]
    fn trigger_off_is_silent() {
        for p in Phase::ALL {
            let (n, cmds) = step(&at(p), &Event::new(0, EventKind::TriggerOff), &cfg());
            assert_eq!((n.phase, cmds.len()), (p, 0));
        }
    }

    #[test]
    fn timing_validation() {
        assert!(cfg().validate().is_ok());
        assert!(TimingConfig {
            capture_window: 0.0,
            ..cfg()
        }
        .validate()
        .is_err());
        assert!(TimingConfig {
            frames_per_trigger: 2,
            ..cfg()
        }
        .validate()
        .is_err());
        assert_eq!(cfg().frame_offsets_ms(), [1666, 3333, 5000]);
    }

    #[test]
    fn clamped_solution_is_logged() {
        let mut a = aim();
        a.solution.clamped = true;
        let (_, cmds) = step(
            &at(Phase::Detecting),
            &Event::new(0, EventKind::DetectionDone(a)),
            &cfg(),
        );
        assert_eq!(non_log(&cmds), vec![Command::MoveServos(a.solution.angles)]);
        assert!(cmds.iter().any(|c| matches!(
            c,
            Command::LogEvent(LogRecord {
                kind: LogKind::Clamped,
                ..
            })
        )));
    }
}
