//! Scripted scenarios on the virtual clock.
//!
//! A script is a TOML document: a timeline of `[[step]]` entries, optional
//! rig overrides under `[rig]`, and expectations under `[expect]`. See
//! `docs/scenarios.md` for the format.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sls_core::controller::{CycleOutcome, CycleReport, EventKind, LogRecord, Notice};
use sls_core::geometry::PixelPoint;
use sls_mqtt::{Broker, BrokerConfig, Client, ClientOptions, TriggerMessage, TriggerState};
use thiserror::Error;

use crate::detectors::DetectorKind;
use crate::rig::{BeamState, Rig, RigConfig, RigError};
use crate::world::{Marker, SceneError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot parse scenario: {0}")]
    Parse(String),
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Rig(#[from] RigError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error("cycle {cycle} took {total_ms} ms of simulated time, budget {budget_ms} ms")]
    Deadline {
        cycle: u32,
        total_ms: u64,
        budget_ms: u64,
    },
    #[error("trigger transport: {0}")]
    Transport(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transport {
    /// Triggers are posted straight into the controller.
    Direct,
    /// Triggers travel through an embedded broker as "ON"/"OFF" publishes.
    #[default]
    Mqtt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    PlaceMarker {
        cx: f64,
        cy: f64,
        radius: f64,
    },
    RemoveMarker,
    Occlude {
        duration_s: f64,
    },
    Trigger,
    /// Publishes "OFF"; the controller treats it as a heartbeat.
    Release,
    SetDetectionDropout {
        p: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct Step {
    pub at_s: f64,
    #[serde(flatten)]
    pub action: Action,
}

// `flatten` swallows unknown keys, so split the table by hand and let the
// action reject anything it does not know.
impl TryFrom<toml::Table> for Step {
    type Error = String;

    fn try_from(mut table: toml::Table) -> Result<Self, Self::Error> {
        let at_s = match table.remove("at_s") {
            Some(toml::Value::Float(v)) => v,
            Some(toml::Value::Integer(v)) => v as f64,
            Some(other) => return Err(format!("at_s must be a number, got {}", other.type_str())),
            None => return Err("step is missing at_s".into()),
        };
        let action =
            Action::deserialize(toml::Value::Table(table.clone())).map_err(|e| e.to_string())?;
        let known = toml::Table::try_from(&action).map_err(|e| e.to_string())?;
        if let Some(extra) = table.keys().find(|k| !known.contains_key(*k)) {
            return Err(format!("unknown field `{extra}` for this action"));
        }
        Ok(Self { at_s, action })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Expectations {
    /// Outcome of every completed cycle, in order.
    pub outcomes: Option<Vec<CycleOutcome>>,
    /// Detections per cycle, in order.
    pub detections: Option<Vec<u8>>,
    /// Bound on the beam-to-marker distance at the end of every aimed cycle.
    pub max_beam_error_px: Option<f64>,
    /// The servos end where they started.
    pub beam_unmoved: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioScript {
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub transport: Transport,
    /// Simulated-time allowance for aiming on top of the capture and detection budgets.
    #[serde(default = "default_aim_budget")]
    pub aim_budget_s: f64,
    #[serde(default)]
    pub rig: RigOverrides,
    #[serde(default, rename = "step")]
    pub steps: Vec<Step>,
    #[serde(default)]
    pub expect: Expectations,
}

fn default_aim_budget() -> f64 {
    2.0
}

/// Rig settings a scenario may change; everything else uses [`RigConfig`] defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigOverrides {
    pub detector: Option<DetectorKind>,
    pub aim_noise_px: Option<f64>,
    pub noise_sigma: Option<f32>,
    pub slew_rate: Option<f64>,
    pub illumination_gain: Option<f32>,
    pub background: Option<sls_core::detection::synth::Background>,
}

impl ScenarioScript {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let script: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        script.validate()?;
        Ok(script)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: String| Err(ScenarioError::Invalid(m));
        let mut last = 0.0;
        for (i, step) in self.steps.iter().enumerate() {
            if !(step.at_s.is_finite() && step.at_s >= 0.0) {
                return invalid(format!("step {i}: time must be >= 0"));
            }
            if step.at_s < last {
                return invalid(format!(
                    "step {i}: times must be non-decreasing ({} after {last})",
                    step.at_s
                ));
            }
            last = step.at_s;
            match step.action {
                Action::SetDetectionDropout { p } if !(0.0..=1.0).contains(&p) => {
                    return invalid(format!(
                        "step {i}: dropout p must be within [0, 1], got {p}"
                    ));
                }
                Action::Occlude { duration_s }
                    if !(duration_s.is_finite() && duration_s >= 0.0) =>
                {
                    return invalid(format!("step {i}: occlusion duration must be >= 0"));
                }
                Action::PlaceMarker { radius, .. } if !(radius.is_finite() && radius > 0.0) => {
                    return invalid(format!("step {i}: marker radius must be > 0"));
                }
                _ => {}
            }
        }
        if !(self.aim_budget_s.is_finite() && self.aim_budget_s > 0.0) {
            return invalid("aim_budget_s must be > 0".into());
        }
        Ok(())
    }

    pub fn rig_config(&self) -> RigConfig {
        let mut cfg = RigConfig {
            seed: self.seed,
            ..RigConfig::default()
        };
        let o = &self.rig;
        if let Some(d) = o.detector {
            cfg.detector = d;
        }
        if let Some(v) = o.aim_noise_px {
            cfg.aim_noise_px = v;
        }
        if let Some(v) = o.noise_sigma {
            cfg.camera.noise_sigma = v;
        }
        if let Some(v) = o.slew_rate {
            cfg.servo.slew_rate = v;
        }
        if let Some(v) = o.illumination_gain {
            cfg.scene.illumination_gain = v;
        }
        if let Some(bg) = &o.background {
            cfg.scene.background = bg.clone();
        }
        cfg
    }
}

fn ms(s: f64) -> u64 {
    (s * 1000.0).round() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub report: CycleReport,
    /// Marker center when the cycle ended, if one was placed.
    pub marker: Option<PixelPoint>,
    pub beam: PixelPoint,
    pub beam_error_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LightChange {
    pub at_ms: u64,
    pub lights: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub name: String,
    pub seed: u64,
    pub transport: Transport,
    pub detector: DetectorKind,
    pub end_ms: u64,
    pub triggers_sent: u32,
    pub triggers_delivered: u32,
    pub cycles: Vec<CycleRecord>,
    pub final_beam: BeamState,
    pub final_marker: Option<PixelPoint>,
    pub final_beam_error_px: Option<f64>,
    pub lights: Vec<LightChange>,
    pub logs: Vec<LogRecord>,
    pub checks: Vec<Check>,
    pub passed: bool,
}

impl ScenarioReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Controller-side and switch-side clients on an embedded broker.
struct MqttLink {
    _broker: Broker,
    switch: Client,
    controller: Client,
    topic: String,
}

impl MqttLink {
    fn start() -> Result<Self, ScenarioError> {
        let err = |e: &dyn std::fmt::Display| ScenarioError::Transport(e.to_string());
        let broker = Broker::start("127.0.0.1:0", BrokerConfig::default()).map_err(|e| err(&e))?;
        let endpoint = broker.local_addr().to_string();
        let topic = sls_mqtt::DEFAULT_TOPIC.to_owned();
        let mut controller = Client::connect(&endpoint, &ClientOptions::new("sls-controller"))
            .map_err(|e| err(&e))?;
        controller.subscribe(&topic).map_err(|e| err(&e))?;
        let switch =
            Client::connect(&endpoint, &ClientOptions::new("sls-switch")).map_err(|e| err(&e))?;
        Ok(Self {
            _broker: broker,
            switch,
            controller,
            topic,
        })
    }

    /// Publishes `state` and waits for the controller side to receive it.
    fn deliver(&self, state: TriggerState) -> Result<TriggerState, ScenarioError> {
        self.switch
            .publish(&self.topic, state.as_payload())
            .map_err(|e| ScenarioError::Transport(e.to_string()))?;
        loop {
            match self.controller.recv_timeout(Duration::from_secs(2)) {
                Ok(Some(p)) => {
                    if let Some(m) = TriggerMessage::from_publish(&p, &self.topic) {
                        return Ok(m.state);
                    }
                }
                Ok(None) => {
                    return Err(ScenarioError::Transport(
                        "publish not delivered within 2 s".into(),
                    ))
                }
                Err(e) => return Err(ScenarioError::Transport(e.to_string())),
            }
        }
    }
}

struct Runner {
    rig: Rig,
    cycles: Vec<CycleRecord>,
    lights: Vec<LightChange>,
    logs: Vec<LogRecord>,
    budget_ms: u64,
    unsettled: Option<usize>,
}

impl Runner {
    fn drain(&mut self) {
        for n in self.rig.controller.drain_notices() {
            match n {
                Notice::Phase { at_ms, lights, .. } => {
                    let name = lights.name().to_owned();
                    if self.lights.last().is_none_or(|l| l.lights != name) {
                        self.lights.push(LightChange {
                            at_ms,
                            lights: name,
                        });
                    }
                }
                Notice::Log(r) => self.logs.push(r),
                _ => {}
            }
        }
    }

    fn record_finished(&mut self) -> Result<(), ScenarioError> {
        while self.cycles.len() < self.rig.controller.reports().len() {
            let report = self.rig.controller.reports()[self.cycles.len()].clone();
            if report.total_ms > self.budget_ms {
                return Err(ScenarioError::Deadline {
                    cycle: report.cycle,
                    total_ms: report.total_ms,
                    budget_ms: self.budget_ms,
                });
            }
            let marker = self.rig.with_world(|w| w.scene.marker.map(|m| m.center()));
            self.cycles.push(CycleRecord {
                report,
                marker,
                beam: PixelPoint::default(),
                beam_error_px: None,
            });
            self.unsettled = Some(self.cycles.len() - 1);
        }
        // The beam is measured once the servos have landed.
        if let Some(i) = self
            .unsettled
            .filter(|_| !self.rig.controller.servo_settling())
        {
            let beam = self.rig.beam().aim_point;
            let record = &mut self.cycles[i];
            record.beam = beam;
            record.beam_error_px = record.marker.map(|m| beam.distance(&m));
            self.unsettled = None;
        }
        Ok(())
    }

    fn advance_to(&mut self, t: u64) -> Result<(), ScenarioError> {
        while self.rig.controller.next_due().is_some_and(|due| due <= t) {
            self.rig.controller.process_next();
            self.record_finished()?;
        }
        self.rig.controller.run_until(t);
        self.drain();
        Ok(())
    }

    fn finish(&mut self) -> Result<(), ScenarioError> {
        while self.rig.controller.process_next() {
            self.record_finished()?;
        }
        self.record_finished()?;
        self.drain();
        Ok(())
    }
}

/// Runs `script` against a freshly assembled rig on the virtual clock.
pub fn run_scenario(script: &ScenarioScript) -> Result<ScenarioReport, ScenarioError> {
    script.validate()?;
    let config = script.rig_config();
    let detector = config.detector;
    let timing = config.timing;
    let rig = Rig::new(config)?;
    let start_angles = rig.controller.servo_angles();
    let link = match script.transport {
        Transport::Direct => None,
        Transport::Mqtt => Some(MqttLink::start()?),
    };
    let budget_ms = timing.capture_ms() + timing.detect_ms() + ms(script.aim_budget_s);
    let mut run = Runner {
        rig,
        cycles: Vec::new(),
        lights: Vec::new(),
        logs: Vec::new(),
        budget_ms,
        unsettled: None,
    };
    run.rig.controller.post(0, EventKind::PowerOn);

    let (mut sent, mut delivered) = (0, 0);
    for step in &script.steps {
        let t = ms(step.at_s);
        run.advance_to(t)?;
        match &step.action {
            Action::PlaceMarker { cx, cy, radius } => {
                let marker = Marker {
                    cx: *cx,
                    cy: *cy,
                    radius: *radius,
                    occluded: false,
                };
                run.rig.with_world(|w| w.place_marker(marker))?;
            }
            Action::RemoveMarker => run.rig.with_world(|w| w.remove_marker()),
            Action::Occlude { duration_s } => run.rig.with_world(|w| w.occlude(t, ms(*duration_s))),
            Action::SetDetectionDropout { p } => run.rig.with_world(|w| w.set_dropout(*p))?,
            Action::Trigger | Action::Release => {
                let state = if step.action == Action::Trigger {
                    TriggerState::On
                } else {
                    TriggerState::Off
                };
                sent += 1;
                let received = match &link {
                    Some(link) => link.deliver(state)?,
                    None => state,
                };
                delivered += 1;
                let kind = if received == TriggerState::On {
                    EventKind::TriggerOn
                } else {
                    EventKind::TriggerOff
                };
                run.rig.controller.post(t, kind);
            }
        }
    }
    run.finish()?;

    let final_beam = run.rig.beam();
    let final_marker = run.rig.with_world(|w| w.scene.marker.map(|m| m.center()));
    let final_beam_error_px = run.rig.beam_error_px();
    let moved = run.rig.controller.servo_angles() != start_angles;
    let checks = evaluate(&script.expect, &run.cycles, moved);
    Ok(ScenarioReport {
        name: script.name.clone(),
        seed: script.seed,
        transport: script.transport,
        detector,
        end_ms: run.rig.controller.now_ms(),
        triggers_sent: sent,
        triggers_delivered: delivered,
        passed: checks.iter().all(|c| c.passed),
        cycles: run.cycles,
        final_beam,
        final_marker,
        final_beam_error_px,
        lights: run.lights,
        logs: run.logs,
        checks,
    })
}

fn evaluate(expect: &Expectations, cycles: &[CycleRecord], moved: bool) -> Vec<Check> {
    let mut checks = Vec::new();
    if let Some(want) = &expect.outcomes {
        let got: Vec<CycleOutcome> = cycles.iter().map(|c| c.report.outcome).collect();
        checks.push(Check {
            name: "outcomes".into(),
            passed: &got == want,
            detail: format!("expected {want:?}, got {got:?}"),
        });
    }
    if let Some(want) = &expect.detections {
        let got: Vec<u8> = cycles.iter().map(|c| c.report.detections).collect();
        checks.push(Check {
            name: "detections".into(),
            passed: &got == want,
            detail: format!("expected {want:?}, got {got:?}"),
        });
    }
    if let Some(bound) = expect.max_beam_error_px {
        let errors: Vec<f64> = cycles
            .iter()
            .filter(|c| c.report.outcome == CycleOutcome::Aimed)
            .filter_map(|c| c.beam_error_px)
            .collect();
        let worst = errors.iter().copied().fold(0.0, f64::max);
        checks.push(Check {
            name: "max_beam_error_px".into(),
            passed: !errors.is_empty() && worst <= bound,
            detail: format!(
                "worst {worst:.4} px over {} aimed cycles, bound {bound} px",
                errors.len()
            ),
        });
    }
    if let Some(want) = expect.beam_unmoved {
        checks.push(Check {
            name: "beam_unmoved".into(),
            passed: want == !moved,
            detail: format!(
                "servos {}",
                if moved {
                    "moved"
                } else {
                    "stayed at reference"
                }
            ),
        });
    }
    checks
}

/// Scenarios shipped with the crate, by name.
pub const BUNDLED: &[(&str, &str)] = &[
    (
        "static_center",
        include_str!("../scenarios/static_center.toml"),
    ),
    (
        "offset_marker",
        include_str!("../scenarios/offset_marker.toml"),
    ),
    ("no_marker", include_str!("../scenarios/no_marker.toml")),
    (
        "full_dropout",
        include_str!("../scenarios/full_dropout.toml"),
    ),
    (
        "all_occluded",
        include_str!("../scenarios/all_occluded.toml"),
    ),
    (
        "partial_occlusion",
        include_str!("../scenarios/partial_occlusion.toml"),
    ),
    (
        "reference_detector",
        include_str!("../scenarios/reference_detector.toml"),
    ),
    (
        "moving_marker",
        include_str!("../scenarios/moving_marker.toml"),
    ),
    (
        "mqtt_trigger",
        include_str!("../scenarios/mqtt_trigger.toml"),
    ),
    (
        "direct_trigger",
        include_str!("../scenarios/direct_trigger.toml"),
    ),
];

pub fn bundled(name: &str) -> Option<ScenarioScript> {
    BUNDLED
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, text)| ScenarioScript::parse(text).expect("bundled scenarios are valid"))
}
