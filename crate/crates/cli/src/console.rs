//! Websocket backend for the operator console.
//!
//! Protocol v1, JSON text frames. On connect the server sends one `snapshot`;
//! afterwards it pushes deltas (`phase`, `servo`, `marker`, `cycle`, `log`),
//! each carrying a sequence number that continues from the snapshot's. Clients
//! send `place_marker`, `remove_marker` and `press_trigger`; each command is
//! answered with `ack` or `error`. See `docs/console-protocol.md`.

use std::collections::VecDeque;
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sls_core::controller::{Controller, CycleReport, LogRecord, Notice, Phase, SignalLights};
use sls_core::geometry::{CalibrationProfile, PanTiltAngles, PixelPoint};
use sls_mqtt::{Client, ClientOptions, TriggerState};
use sls_sim::{beam_point, Marker, SharedWorld};
use tungstenite::Message;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamView {
    pub x: f64,
    pub y: f64,
    pub spot_radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleView {
    pub report: CycleReport,
    pub beam_error_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsoleState {
    pub phase: Phase,
    pub lights: SignalLights,
    pub marker: Option<Marker>,
    pub servo: PanTiltAngles,
    pub beam: BeamView,
    pub crop_width: u32,
    pub crop_height: u32,
    /// Most recent cycles, oldest first.
    pub cycles: VecDeque<CycleView>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Snapshot {
        version: u32,
        seq: u64,
        state: ConsoleState,
    },
    Phase {
        seq: u64,
        at_ms: u64,
        from: Phase,
        to: Phase,
        lights: SignalLights,
    },
    Servo {
        seq: u64,
        at_ms: u64,
        angles: PanTiltAngles,
        beam: BeamView,
    },
    Marker {
        seq: u64,
        marker: Option<Marker>,
    },
    Cycle {
        seq: u64,
        cycle: CycleView,
    },
    Log {
        seq: u64,
        record: LogRecord,
    },
    Ack {
        command: String,
    },
    Error {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    PlaceMarker { x: f64, y: f64, radius: Option<f64> },
    RemoveMarker,
    PressTrigger,
}

impl ClientMessage {
    fn name(&self) -> &'static str {
        match self {
            ClientMessage::PlaceMarker { .. } => "place_marker",
            ClientMessage::RemoveMarker => "remove_marker",
            ClientMessage::PressTrigger => "press_trigger",
        }
    }
}

pub const DEFAULT_MARKER_RADIUS: f64 = 10.0;

struct HubInner {
    state: ConsoleState,
    seq: u64,
    clients: Vec<Sender<String>>,
    history: usize,
}

/// Current view plus the connected clients' outgoing queues.
pub struct Hub {
    inner: Mutex<HubInner>,
}

fn to_text(msg: &ServerMessage) -> String {
    serde_json::to_string(msg).expect("server messages serialize")
}

impl Hub {
    pub fn new(state: ConsoleState, history: usize) -> Self {
        Self {
            inner: Mutex::new(HubInner {
                state,
                seq: 0,
                clients: Vec::new(),
                history: history.max(1),
            }),
        }
    }

    fn lock(&self) -> MutexGuard<'_, HubInner> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Registers a client and returns its snapshot. Deltas sent after this
    /// call carry higher sequence numbers than the snapshot.
    pub fn subscribe(&self, client: Sender<String>) -> String {
        let mut inner = self.lock();
        inner.clients.push(client);
        to_text(&ServerMessage::Snapshot {
            version: PROTOCOL_VERSION,
            seq: inner.seq,
            state: inner.state.clone(),
        })
    }

    /// Applies a change to the view and fans the resulting delta out.
    fn publish(&self, update: impl FnOnce(&mut ConsoleState, u64) -> ServerMessage) {
        let mut inner = self.lock();
        inner.seq += 1;
        let seq = inner.seq;
        let msg = update(&mut inner.state, seq);
        let text = to_text(&msg);
        inner.clients.retain(|c| c.send(text.clone()).is_ok());
    }

    pub fn marker_changed(&self, marker: Option<Marker>) {
        self.publish(|s, seq| {
            s.marker = marker;
            ServerMessage::Marker { seq, marker }
        });
    }

    fn push_cycle(&self, cycle: CycleView) {
        let mut inner = self.lock();
        inner.seq += 1;
        let seq = inner.seq;
        let history = inner.history;
        inner.state.cycles.push_back(cycle.clone());
        while inner.state.cycles.len() > history {
            inner.state.cycles.pop_front();
        }
        let text = to_text(&ServerMessage::Cycle { seq, cycle });
        inner.clients.retain(|c| c.send(text.clone()).is_ok());
    }
}

/// Projects controller notices onto the hub. Cycle results wait until the
/// servos have settled so the reported beam error is final.
pub struct Projector {
    hub: Arc<Hub>,
    world: SharedWorld,
    calibration: CalibrationProfile,
    spot_radius: f64,
    pending: Vec<CycleReport>,
}

impl Projector {
    pub fn new(
        hub: Arc<Hub>,
        world: SharedWorld,
        calibration: CalibrationProfile,
        spot_radius: f64,
    ) -> Self {
        Self {
            hub,
            world,
            calibration,
            spot_radius,
            pending: Vec::new(),
        }
    }

    fn beam(&self, angles: PanTiltAngles) -> BeamView {
        let offset = self
            .world
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .aim_offset;
        let p = beam_point(angles, &self.calibration, offset);
        BeamView {
            x: p.x,
            y: p.y,
            spot_radius: self.spot_radius,
        }
    }

    pub fn on_tick(&mut self, controller: &Controller, notices: &[Notice]) {
        for notice in notices.iter().cloned() {
            match notice {
                Notice::Phase {
                    at_ms,
                    from,
                    to,
                    lights,
                } => self.hub.publish(|s, seq| {
                    s.phase = to;
                    s.lights = lights;
                    ServerMessage::Phase {
                        seq,
                        at_ms,
                        from,
                        to,
                        lights,
                    }
                }),
                Notice::Servo { at_ms, angles } => {
                    let beam = self.beam(angles);
                    self.hub.publish(|s, seq| {
                        s.servo = angles;
                        s.beam = beam;
                        ServerMessage::Servo {
                            seq,
                            at_ms,
                            angles,
                            beam,
                        }
                    });
                }
                Notice::Log(record) => self
                    .hub
                    .publish(|_, seq| ServerMessage::Log { seq, record }),
                Notice::Cycle(report) => self.pending.push(report),
            }
        }
        if !controller.servo_settling() {
            for report in std::mem::take(&mut self.pending) {
                let beam = self.beam(controller.servo_angles());
                let marker = self
                    .world
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .scene
                    .marker;
                let beam_error_px =
                    marker.map(|m| PixelPoint::new(beam.x, beam.y).distance(&m.center()));
                self.hub.push_cycle(CycleView {
                    report,
                    beam_error_px,
                });
            }
        }
    }
}

/// What command handlers need: the scene and a way to press the switch.
pub struct Commands {
    pub hub: Arc<Hub>,
    pub world: SharedWorld,
    pub endpoint: String,
    pub topic: String,
    options: ClientOptions,
    switch: Mutex<Option<Client>>,
}

impl Commands {
    pub fn new(
        hub: Arc<Hub>,
        world: SharedWorld,
        endpoint: String,
        topic: String,
        options: ClientOptions,
    ) -> Self {
        Self {
            hub,
            world,
            endpoint,
            topic,
            options,
            switch: Mutex::new(None),
        }
    }

    fn press_trigger(&self) -> Result<(), String> {
        let mut switch = self.switch.lock().unwrap_or_else(|p| p.into_inner());
        for _ in 0..2 {
            if switch.as_ref().is_none_or(|c| !c.is_connected()) {
                *switch = Some(
                    Client::connect(&self.endpoint, &self.options).map_err(|e| e.to_string())?,
                );
            }
            match switch
                .as_ref()
                .expect("connected above")
                .publish(&self.topic, TriggerState::On.as_payload())
            {
                Ok(()) => return Ok(()),
                Err(e) => {
                    log::warn!("console trigger publish failed: {e}; reconnecting");
                    *switch = None;
                }
            }
        }
        Err("broker unreachable".into())
    }

    /// Handles one client frame and returns the direct reply.
    pub fn handle(&self, text: &str) -> ServerMessage {
        let cmd: ClientMessage = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => {
                return ServerMessage::Error {
                    message: format!("bad command: {e}"),
                }
            }
        };
        let result = match &cmd {
            ClientMessage::PlaceMarker { x, y, radius } => {
                let marker = Marker {
                    cx: *x,
                    cy: *y,
                    radius: radius.unwrap_or(DEFAULT_MARKER_RADIUS),
                    occluded: false,
                };
                let placed = self
                    .world
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .place_marker(marker);
                placed
                    .map(|()| self.hub.marker_changed(Some(marker)))
                    .map_err(|e| e.to_string())
            }
            ClientMessage::RemoveMarker => {
                self.world
                    .lock()
                    .unwrap_or_else(|p| p.into_inner())
                    .remove_marker();
                self.hub.marker_changed(None);
                Ok(())
            }
            ClientMessage::PressTrigger => self.press_trigger(),
        };
        match result {
            Ok(()) => ServerMessage::Ack {
                command: cmd.name().into(),
            },
            Err(message) => ServerMessage::Error {
                message: format!("{}: {message}", cmd.name()),
            },
        }
    }
}

fn is_timeout(err: &tungstenite::Error) -> bool {
    matches!(err, tungstenite::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut))
}

fn serve_client(stream: TcpStream, commands: Arc<Commands>, stop: Arc<AtomicBool>) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    if stream.set_nonblocking(false).is_err() {
        return;
    }
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("console handshake with {peer} failed: {e}");
            return;
        }
    };
    let _ = ws
        .get_ref()
        .set_read_timeout(Some(Duration::from_millis(20)));
    let (tx, rx) = mpsc::channel();
    let snapshot = commands.hub.subscribe(tx);
    if ws.send(Message::text(snapshot)).is_err() {
        return;
    }
    log::info!("console client {peer} connected");
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            break;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = to_text(&commands.handle(&text));
                if ws.send(Message::text(reply)).is_err() {
                    break;
                }
            }
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(_) => break,
        }
        while let Ok(text) = rx.try_recv() {
            if ws.send(Message::text(text)).is_err() {
                return;
            }
        }
    }
    log::info!("console client {peer} disconnected");
}

/// Accepts websocket clients until stopped.
pub struct ConsoleServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl ConsoleServer {
    pub fn bind(listen: &str, commands: Arc<Commands>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(listen)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let handle = {
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                while !stop.load(Ordering::SeqCst) {
                    match listener.accept() {
                        Ok((stream, _)) => {
                            let (commands, stop) = (commands.clone(), stop.clone());
                            workers.push(std::thread::spawn(move || {
                                serve_client(stream, commands, stop)
                            }));
                        }
                        Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                            std::thread::sleep(Duration::from_millis(10));
                        }
                        Err(e) => log::warn!("console accept failed: {e}"),
                    }
                    workers.retain(|w: &JoinHandle<()>| !w.is_finished());
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ConsoleServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}
