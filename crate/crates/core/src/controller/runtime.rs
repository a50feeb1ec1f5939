//! Event-queue runtime around the pure state machine.
//!
//! All inputs (triggers, timers, frame captures, servo progress) become
//! timestamped entries in a single ordered queue. Processing an entry steps
//! the state machine and executes the resulting commands against the
//! adapters, which may in turn schedule further entries. Driving the queue
//! with queue timestamps gives a virtual clock; [`run_live`] drives it from
//! the wall clock instead.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::sync::mpsc::{Receiver, RecvTimeoutError};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::adapters::{Camera, ServoDriver, SignalPanel};
use super::fsm::{
    self, AimSolution, Command, ControllerState, Event, EventKind, LogRecord, Phase, SignalLights,
    TimingConfig,
};
use super::report::{CycleOutcome, CycleReport};
use crate::detection::{self, MarkerDetector};
use crate::frame::Frame;
use crate::geometry::{
    average_centers, compute_pan_tilt, correct_marker_coords, CalibrationProfile, PanTiltAngles,
    PixelPoint,
};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("controller is {0:?}, not ready for a trigger")]
    NotReady(Phase),
    #[error("event queue ran dry in {0:?} before the cycle finished")]
    Stalled(Phase),
}

/// Observable side effects, drained by whoever hosts the controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "notice", rename_all = "snake_case")]
pub enum Notice {
    Phase {
        at_ms: u64,
        from: Phase,
        to: Phase,
        lights: SignalLights,
    },
    Servo {
        at_ms: u64,
        angles: PanTiltAngles,
    },
    Log(LogRecord),
    Cycle(CycleReport),
}

#[derive(Debug, Clone, PartialEq)]
enum Item {
    Fsm(EventKind),
    Capture { cycle: u32, index: u8 },
    ServoTick { cycle: u32 },
}

#[derive(Debug, Clone)]
struct Scheduled {
    at_ms: u64,
    /// Hardware completions (0) run before state-machine events (1) at equal times.
    priority: u8,
    seq: u64,
    item: Item,
}

impl Scheduled {
    fn key(&self) -> (u64, u8, u64) {
        (self.at_ms, self.priority, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// The adapter set the controller drives.
pub struct Adapters {
    pub camera: Box<dyn Camera + Send>,
    pub detector: Box<dyn MarkerDetector + Send>,
    pub servo: Box<dyn ServoDriver + Send>,
    pub lights: Box<dyn SignalPanel + Send>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeOptions {
    /// Servo integration step while aiming.
    pub servo_tick_ms: u64,
    /// Aiming longer than this raises a hardware fault.
    pub aim_timeout_ms: u64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        Self {
            servo_tick_ms: 10,
            aim_timeout_ms: 10_000,
        }
    }
}

#[derive(Debug, Default, Clone)]
struct CycleMarks {
    detecting: Option<u64>,
    aiming: Option<u64>,
}

pub struct Controller {
    state: ControllerState,
    timing: TimingConfig,
    calibration: CalibrationProfile,
    options: RuntimeOptions,
    adapters: Adapters,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    now_ms: u64,
    frames: Vec<(u8, Frame)>,
    current: Option<(CycleReport, CycleMarks)>,
    reports: Vec<CycleReport>,
    notices: Vec<Notice>,
    /// Servos still finishing their last move after the aim was reported reached.
    settling: bool,
}

impl Controller {
    pub fn new(
        calibration: CalibrationProfile,
        timing: TimingConfig,
        adapters: Adapters,
        options: RuntimeOptions,
    ) -> Result<Self, RuntimeError> {
        calibration
            .validate()
            .map_err(|e| RuntimeError::Config(e.to_string()))?;
        timing
            .validate()
            .map_err(|e| RuntimeError::Config(e.to_string()))?;
        if options.servo_tick_ms == 0 {
            return Err(RuntimeError::Config("servo_tick_ms must be > 0".into()));
        }
        Ok(Self {
            state: ControllerState::default(),
            timing,
            calibration,
            options,
            adapters,
            queue: BinaryHeap::new(),
            seq: 0,
            now_ms: 0,
            frames: Vec::new(),
            current: None,
            reports: Vec::new(),
            notices: Vec::new(),
            settling: false,
        })
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn now_ms(&self) -> u64 {
        self.now_ms
    }

    pub fn calibration(&self) -> &CalibrationProfile {
        &self.calibration
    }

    pub fn timing(&self) -> &TimingConfig {
        &self.timing
    }

    pub fn reports(&self) -> &[CycleReport] {
        &self.reports
    }

    pub fn servo_angles(&self) -> PanTiltAngles {
        self.adapters.servo.current()
    }

    pub fn drain_notices(&mut self) -> Vec<Notice> {
        std::mem::take(&mut self.notices)
    }

    fn schedule(&mut self, at_ms: u64, priority: u8, item: Item) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled {
            at_ms,
            priority,
            seq: self.seq,
            item,
        }));
    }

    /// Queues an external event. Times earlier than the controller clock are
    /// moved up to it.
    pub fn post(&mut self, at_ms: u64, kind: EventKind) {
        self.schedule(at_ms.max(self.now_ms), 1, Item::Fsm(kind));
    }

    pub fn next_due(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(s)| s.at_ms)
    }

    /// True while the servos are still closing the last fraction of a move
    /// that was already reported as reached.
    pub fn servo_settling(&self) -> bool {
        self.settling
    }

    /// Processes queued entries until the servos have settled.
    pub fn settle(&mut self) {
        while self.settling && self.process_next() {}
    }

    pub fn is_idle(&self) -> bool {
        self.queue.is_empty()
    }

    /// Processes the earliest queued entry. Returns false when the queue is empty.
    pub fn process_next(&mut self) -> bool {
        let Some(Reverse(entry)) = self.queue.pop() else {
            return false;
        };
        self.now_ms = self.now_ms.max(entry.at_ms);
        let t = self.now_ms;
        match entry.item {
            Item::Fsm(kind) => self.apply(Event::new(t, kind)),
            Item::Capture { cycle, index } => {
                if cycle == self.state.cycle && self.state.phase == Phase::Capturing {
                    match self.adapters.camera.capture(t) {
                        Ok(frame) => {
                            self.frames.push((index, frame));
                            self.apply(Event::new(t, EventKind::FrameCaptured { index }));
                        }
                        Err(e) => self.apply(Event::new(
                            t,
                            EventKind::HardwareFault {
                                reason: e.to_string(),
                            },
                        )),
                    }
                }
            }
            Item::ServoTick { cycle } => {
                if cycle == self.state.cycle && self.state.phase == Phase::Aiming {
                    self.servo_tick(t);
                } else if cycle == self.state.cycle
                    && self.state.phase == Phase::Aimed
                    && self.settling
                {
                    self.settle_tick(t);
                } else {
                    self.settling = false;
                }
            }
        }
        true
    }

    /// Processes every entry due at or before `t`, then advances the clock to `t`.
    pub fn run_until(&mut self, t: u64) {
        while self.next_due().is_some_and(|due| due <= t) {
            self.process_next();
        }
        self.now_ms = self.now_ms.max(t);
    }

    pub fn run_until_idle(&mut self) {
        while self.process_next() {}
    }

    /// Powers the device on at `at_ms` and runs through initialization.
    pub fn power_on(&mut self, at_ms: u64) -> Result<(), RuntimeError> {
        self.post(at_ms, EventKind::PowerOn);
        while self.state.phase == Phase::Off || self.state.phase == Phase::Initializing {
            if !self.process_next() {
                return Err(RuntimeError::Stalled(self.state.phase));
            }
        }
        Ok(())
    }

    /// Runs one full trigger-to-completion cycle on the virtual clock.
    pub fn run_cycle(&mut self, trigger_at_ms: u64) -> Result<CycleReport, RuntimeError> {
        if !matches!(self.state.phase, Phase::Ready | Phase::Aimed) {
            return Err(RuntimeError::NotReady(self.state.phase));
        }
        let done = self.reports.len();
        self.post(trigger_at_ms, EventKind::TriggerOn);
        while self.reports.len() == done {
            if !self.process_next() {
                return Err(RuntimeError::Stalled(self.state.phase));
            }
        }
        Ok(self.reports[done].clone())
    }

    fn apply(&mut self, event: Event) {
        let t = event.at_ms;
        let (next, commands) = fsm::step(&self.state, &event, &self.timing);
        let from = self.state.phase;
        self.state = next;
        let to = self.state.phase;
        if from != to {
            self.notices.push(Notice::Phase {
                at_ms: t,
                from,
                to,
                lights: fsm::lights_for(to),
            });
            self.mark_phase(from, to, t);
        }
        for command in commands {
            self.execute(command, t);
        }
        if from != to {
            self.maybe_finish_cycle(from, to, t, &event);
        }
    }

    fn mark_phase(&mut self, _from: Phase, to: Phase, t: u64) {
        if let Some((_, marks)) = self.current.as_mut() {
            match to {
                Phase::Detecting => marks.detecting = Some(t),
                Phase::Aiming => marks.aiming = Some(t),
                _ => {}
            }
        }
    }

    fn maybe_finish_cycle(&mut self, from: Phase, to: Phase, t: u64, event: &Event) {
        let outcome = match (from, to) {
            (_, Phase::Aimed) => CycleOutcome::Aimed,
            (Phase::Detecting, Phase::Ready) => CycleOutcome::NoMarker,
            (_, Phase::Fault) => CycleOutcome::Fault,
            _ => return,
        };
        let Some((mut report, marks)) = self.current.take() else {
            return;
        };
        report.outcome = outcome;
        if let EventKind::HardwareFault { reason } = &event.kind {
            report.fault = Some(reason.clone());
        }
        let detecting = marks.detecting.unwrap_or(t);
        let aiming = marks.aiming.unwrap_or(t);
        report.capture_ms = detecting - report.trigger_ms;
        report.detect_ms = aiming.max(detecting) - detecting;
        report.aim_ms = t - aiming.min(t);
        report.total_ms = t - report.trigger_ms;
        report.frames_captured = self.state.frames_captured();
        self.frames.clear();
        self.notices.push(Notice::Cycle(report.clone()));
        self.reports.push(report);
    }

    fn fault(&mut self, t: u64, reason: String) {
        self.schedule(t, 0, Item::Fsm(EventKind::HardwareFault { reason }));
    }

    fn execute(&mut self, command: Command, t: u64) {
        match command {
            Command::SetLights(lights) => {
                if let Err(e) = self.adapters.lights.set(lights) {
                    self.fault(t, e.to_string());
                }
            }
            Command::ArmInitTimer { at_ms } => {
                self.schedule(at_ms, 1, Item::Fsm(EventKind::InitDone))
            }
            Command::StartCapture { cycle, deadline_ms } => {
                self.frames.clear();
                self.current = Some((CycleReport::started(cycle, t), CycleMarks::default()));
                self.schedule(
                    deadline_ms,
                    1,
                    Item::Fsm(EventKind::CaptureWindowElapsed { cycle }),
                );
            }
            Command::CaptureFrame { index, at_ms } => {
                if let Some((report, _)) = self.current.as_mut() {
                    report.capture_commands += 1;
                }
                let cycle = self.state.cycle;
                self.schedule(at_ms, 0, Item::Capture { cycle, index });
            }
            Command::RunDetection { deadline_ms, .. } => {
                let result = self.run_detection();
                self.schedule(deadline_ms, 1, Item::Fsm(result));
            }
            Command::MoveServos(angles) => match self.adapters.servo.set_target(angles) {
                Ok(()) => {
                    let cycle = self.state.cycle;
                    self.schedule(t + self.options.servo_tick_ms, 0, Item::ServoTick { cycle });
                }
                Err(e) => self.fault(t, e.to_string()),
            },
            Command::LogEvent(record) => {
                log::info!(target: "sls::controller", "[{} ms] {:?}: {}", record.at_ms, record.kind, record.detail);
                self.notices.push(Notice::Log(record));
            }
        }
    }

    /// Detects the marker in every captured frame and maps the averaged center.
    fn run_detection(&mut self) -> EventKind {
        let crop = self.calibration.crop;
        let mut frames = std::mem::take(&mut self.frames);
        frames.sort_by_key(|(i, _)| *i);
        let mut per_frame = Vec::with_capacity(frames.len());
        for (_, frame) in &frames {
            let cropped = match frame.crop(&crop) {
                Ok(c) => c,
                Err(e) => {
                    return EventKind::HardwareFault {
                        reason: format!("camera: {e}"),
                    }
                }
            };
            match detection::detect(&cropped, &crop, self.adapters.detector.as_mut()) {
                Ok(d) => per_frame.push(d.map(|d| d.center())),
                Err(e) => {
                    return EventKind::HardwareFault {
                        reason: format!("detector: {e}"),
                    }
                }
            }
        }
        self.frames = frames;

        let centers: Vec<PixelPoint> = per_frame.iter().flatten().copied().collect();
        let detections = centers.len() as u8;
        let result = match average_centers(&centers, 1) {
            Err(_) => EventKind::DetectionFailed { detections },
            Ok(center) => match correct_marker_coords(center, &crop) {
                Ok(offset) => {
                    let solution = compute_pan_tilt(offset, &self.calibration);
                    if let Some((report, _)) = self.current.as_mut() {
                        report.averaged_center = Some(center);
                        report.marker_offset = Some(offset);
                        report.angles = Some(solution.angles);
                        report.clamped = solution.clamped;
                    }
                    EventKind::DetectionDone(AimSolution {
                        detections,
                        center,
                        solution,
                    })
                }
                Err(e) => EventKind::HardwareFault {
                    reason: format!("detector: {e}"),
                },
            },
        };
        if let Some((report, _)) = self.current.as_mut() {
            report.detections = detections;
            report.per_frame = per_frame;
        }
        result
    }

    fn servo_tick(&mut self, t: u64) {
        let dt = self.options.servo_tick_ms as f64 / 1000.0;
        match self.adapters.servo.step(dt) {
            Ok(status) => {
                self.notices.push(Notice::Servo {
                    at_ms: t,
                    angles: status.current,
                });
                if status.reached {
                    self.apply(Event::new(t, EventKind::AimReached));
                    if !status.settled {
                        self.settling = true;
                        let cycle = self.state.cycle;
                        self.schedule(t + self.options.servo_tick_ms, 0, Item::ServoTick { cycle });
                    }
                } else if t - self.state.entered_at_ms >= self.options.aim_timeout_ms {
                    self.fault(t, "servo: target not reached before aim timeout".into());
                } else {
                    let cycle = self.state.cycle;
                    self.schedule(t + self.options.servo_tick_ms, 0, Item::ServoTick { cycle });
                }
            }
            Err(e) => self.fault(t, e.to_string()),
        }
    }

    /// Keeps stepping after the aim was reported until the servos land.
    fn settle_tick(&mut self, t: u64) {
        let dt = self.options.servo_tick_ms as f64 / 1000.0;
        match self.adapters.servo.step(dt) {
            Ok(status) => {
                self.notices.push(Notice::Servo {
                    at_ms: t,
                    angles: status.current,
                });
                let overdue = t - self.state.entered_at_ms >= self.options.aim_timeout_ms;
                self.settling = !status.settled && !overdue;
                if self.settling {
                    let cycle = self.state.cycle;
                    self.schedule(t + self.options.servo_tick_ms, 0, Item::ServoTick { cycle });
                }
            }
            Err(e) => {
                self.settling = false;
                self.fault(t, e.to_string());
            }
        }
    }
}

/// Input for [`run_live`].
#[derive(Debug, Clone, PartialEq)]
pub enum LiveInput {
    Event(EventKind),
    Stop,
}

/// Drives the controller from the wall clock. External events arrive on
/// `inputs` and are stamped with the current time. `on_tick` runs after every
/// batch of processing, typically to drain notices.
pub fn run_live(
    controller: &mut Controller,
    inputs: &Receiver<LiveInput>,
    start: Instant,
    mut on_tick: impl FnMut(&mut Controller),
) {
    let now = |start: Instant| start.elapsed().as_millis() as u64;
    loop {
        controller.run_until(now(start));
        on_tick(controller);
        let wait = controller
            .next_due()
            .map(|due| due.saturating_sub(now(start)))
            .unwrap_or(50)
            .min(50);
        match inputs.recv_timeout(Duration::from_millis(wait)) {
            Ok(LiveInput::Event(kind)) => controller.post(now(start), kind),
            Ok(LiveInput::Stop) | Err(RecvTimeoutError::Disconnected) => break,
            Err(RecvTimeoutError::Timeout) => {}
        }
    }
    controller.run_until(now(start));
    on_tick(controller);
}
