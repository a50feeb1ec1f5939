//! Wall-clock assembly shared by `run` and `serve-console`: the simulated rig,
//! a broker (embedded unless an external one is named) and a trigger listener
//! feeding the controller.

use std::sync::mpsc::{self, Receiver, Sender};
use std::time::Duration;

use sls_core::controller::{EventKind, LiveInput, TimingConfig};
use sls_core::geometry::CalibrationProfile;
use sls_mqtt::{Backoff, Broker, BrokerConfig, ClientOptions, TriggerListener, TriggerState};
use sls_sim::{DetectorKind, Marker, Rig, RigConfig};

use crate::error::CliError;

pub const DEFAULT_LISTEN: &str = "127.0.0.1:1883";

#[derive(Debug, Clone)]
pub struct LiveSettings {
    pub calibration: CalibrationProfile,
    pub timing: TimingConfig,
    pub detector: DetectorKind,
    pub seed: u64,
    /// External broker endpoint. `None` starts an embedded broker on `listen`.
    pub broker: Option<String>,
    pub listen: String,
    pub topic: String,
    pub mqtt: MqttIdentity,
    pub marker: Option<Marker>,
}

/// Client-side MQTT settings shared by every connection the process opens.
#[derive(Debug, Clone)]
pub struct MqttIdentity {
    pub client_id_prefix: String,
    pub keep_alive_s: u16,
}

impl Default for MqttIdentity {
    fn default() -> Self {
        Self {
            client_id_prefix: "sls".into(),
            keep_alive_s: 30,
        }
    }
}

impl MqttIdentity {
    /// Options for one connection; `role` keeps ids unique within the process.
    pub fn options(&self, role: &str) -> ClientOptions {
        let mut o = ClientOptions::new(format!(
            "{}-{role}-{}",
            self.client_id_prefix,
            std::process::id()
        ));
        o.keep_alive = self.keep_alive_s;
        o
    }
}

pub struct LiveSystem {
    pub rig: Rig,
    pub endpoint: String,
    pub topic: String,
    pub mqtt: MqttIdentity,
    pub inputs: Sender<LiveInput>,
    pub receiver: Receiver<LiveInput>,
    // Dropped after the listener so the listener disconnects first.
    _listener: TriggerListener,
    broker: Option<Broker>,
}

impl LiveSystem {
    pub fn start(settings: LiveSettings) -> Result<Self, CliError> {
        let config = RigConfig {
            calibration: settings.calibration,
            timing: settings.timing,
            detector: settings.detector,
            seed: settings.seed,
            ..RigConfig::default()
        };
        let rig = Rig::new(config).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(m) = settings.marker {
            rig.with_world(|w| w.place_marker(m))
                .map_err(|e| CliError::Config(e.to_string()))?;
        }

        let (broker, endpoint) = match &settings.broker {
            Some(ep) => (None, ep.clone()),
            None => {
                let b = Broker::start(&settings.listen, BrokerConfig::default()).map_err(|e| {
                    CliError::Bind(format!("cannot bind broker on {}: {e}", settings.listen))
                })?;
                let ep = b.local_addr().to_string();
                (Some(b), ep)
            }
        };

        let (inputs, receiver) = mpsc::channel();
        let tx = inputs.clone();
        let listener = TriggerListener::spawn(
            endpoint.clone(),
            settings.topic.clone(),
            settings.mqtt.options("controller"),
            Backoff::default(),
            move |state| {
                let kind = match state {
                    TriggerState::On => EventKind::TriggerOn,
                    TriggerState::Off => EventKind::TriggerOff,
                };
                let _ = tx.send(LiveInput::Event(kind));
            },
        );
        if !listener.wait_connected(Duration::from_secs(2)) {
            if broker.is_some() {
                return Err(CliError::Runtime(
                    "trigger listener could not reach the embedded broker".into(),
                ));
            }
            log::warn!("broker {endpoint} not reachable yet; the listener keeps retrying");
        }
        Ok(Self {
            rig,
            endpoint,
            topic: settings.topic,
            mqtt: settings.mqtt,
            inputs,
            receiver,
            _listener: listener,
            broker,
        })
    }

    pub fn embedded_broker(&self) -> bool {
        self.broker.is_some()
    }
}

/// Parses `X,Y` or `X,Y,R` (crop pixels) into a marker; radius defaults to 10.
pub fn parse_marker(s: &str) -> Result<Marker, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|e| format!("bad marker {s:?}: {e}"))
        })
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [cx, cy] => Ok(Marker {
            cx: *cx,
            cy: *cy,
            radius: 10.0,
            occluded: false,
        }),
        [cx, cy, radius] => Ok(Marker {
            cx: *cx,
            cy: *cy,
            radius: *radius,
            occluded: false,
        }),
        _ => Err(format!("marker must be X,Y or X,Y,R, got {s:?}")),
    }
}
