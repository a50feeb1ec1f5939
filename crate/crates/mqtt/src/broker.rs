//! Embedded broker: one reader thread and one writer thread per connection.
//!
//! Publishes are fanned out through bounded per-session queues, so a stalled
//! subscriber loses messages instead of holding up everyone else.

use std::collections::{BTreeSet, HashMap};
use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use crate::codec::{encode, Packet, PacketReader, Publish};

/// SubAck return code for a rejected filter.
pub const SUBACK_FAILURE: u8 = 0x80;

#[derive(Debug, Clone, Copy)]
pub struct BrokerConfig {
    /// Outbound packets buffered per session before QoS 0 messages are dropped.
    pub queue_depth: usize,
    /// Time a new connection has to send CONNECT.
    pub connect_timeout: Duration,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        Self {
            queue_depth: 64,
            connect_timeout: Duration::from_secs(10),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BrokerStats {
    pub connections: u64,
    pub published: u64,
    pub delivered: u64,
    pub dropped: u64,
}

/// `true` when a topic filter is supported: non-empty levels may be `+` but
/// `+` must fill its whole level. Multi-level `#` is not supported.
pub fn valid_filter(filter: &str) -> bool {
    !filter.is_empty()
        && !filter.contains(['#', '\0'])
        && filter
            .split('/')
            .all(|level| level == "+" || !level.contains('+'))
}

pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (None, None) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            _ => return false,
        }
    }
}

struct Session {
    client_id: String,
    outbox: SyncSender<Vec<u8>>,
    stream: TcpStream,
}

#[derive(Default)]
struct Shared {
    sessions: RwLock<HashMap<u64, Session>>,
    by_client: Mutex<HashMap<String, u64>>,
    subscriptions: RwLock<HashMap<String, BTreeSet<u64>>>,
    next_session: AtomicU64,
    connections: AtomicU64,
    published: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
}

impl Shared {
    fn fan_out(&self, publish: &Publish) {
        self.published.fetch_add(1, Ordering::Relaxed);
        let targets: BTreeSet<u64> = self
            .subscriptions
            .read()
            .expect("subscription lock")
            .iter()
            .filter(|(filter, _)| topic_matches(filter, &publish.topic))
            .flat_map(|(_, ids)| ids.iter().copied())
            .collect();
        if targets.is_empty() {
            return;
        }
        let bytes = match encode(&Packet::Publish(publish.clone())) {
            Ok(b) => b,
            Err(e) => {
                log::warn!("broker: cannot forward publish: {e}");
                return;
            }
        };
        let sessions = self.sessions.read().expect("session lock");
        for id in targets {
            let Some(session) = sessions.get(&id) else {
                continue;
            };
            match session.outbox.try_send(bytes.clone()) {
                Ok(()) => {
                    self.delivered.fetch_add(1, Ordering::Relaxed);
                }
                Err(TrySendError::Full(_)) => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    log::warn!(
                        "broker: outbound queue full for {}, dropping publish",
                        session.client_id
                    );
                }
                Err(TrySendError::Disconnected(_)) => {}
            }
        }
    }

    fn remove_session(&self, id: u64) {
        let removed = self.sessions.write().expect("session lock").remove(&id);
        if let Some(s) = removed {
            let mut by_client = self.by_client.lock().expect("client lock");
            if by_client.get(&s.client_id) == Some(&id) {
                by_client.remove(&s.client_id);
            }
            let _ = s.stream.shutdown(Shutdown::Both);
        }
        let mut subs = self.subscriptions.write().expect("subscription lock");
        subs.retain(|_, ids| {
            ids.remove(&id);
            !ids.is_empty()
        });
    }
}

pub struct Broker {
    addr: SocketAddr,
    shared: Arc<Shared>,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Broker {
    /// Binds `endpoint` (e.g. `127.0.0.1:1883`, port 0 for any) and starts serving.
    pub fn start(endpoint: &str, config: BrokerConfig) -> io::Result<Self> {
        let listener = TcpListener::bind(endpoint)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared::default());
        let stop = Arc::new(AtomicBool::new(false));
        let accept = {
            let shared = shared.clone();
            let stop = stop.clone();
            std::thread::Builder::new()
                .name("mqtt-accept".into())
                .spawn(move || {
                    for conn in listener.incoming() {
                        if stop.load(Ordering::SeqCst) {
                            break;
                        }
                        match conn {
                            Ok(stream) => {
                                let shared = shared.clone();
                                let _ = std::thread::Builder::new()
                                    .name("mqtt-session".into())
                                    .spawn(move || serve_connection(stream, shared, config));
                            }
                            Err(e) => log::warn!("broker: accept failed: {e}"),
                        }
                    }
                })?
        };
        log::info!("broker listening on {addr}");
        Ok(Self {
            addr,
            shared,
            stop,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> BrokerStats {
        let s = &self.shared;
        BrokerStats {
            connections: s.connections.load(Ordering::Relaxed),
            published: s.published.load(Ordering::Relaxed),
            delivered: s.delivered.load(Ordering::Relaxed),
            dropped: s.dropped.load(Ordering::Relaxed),
        }
    }

    /// Client ids of the live sessions, sorted.
    pub fn clients(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .shared
            .by_client
            .lock()
            .expect("client lock")
            .keys()
            .cloned()
            .collect();
        ids.sort();
        ids
    }

    /// Stops accepting and closes every session.
    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        let ids: Vec<u64> = self
            .shared
            .sessions
            .read()
            .expect("session lock")
            .keys()
            .copied()
            .collect();
        for id in ids {
            self.shared.remove_session(id);
        }
    }
}

impl Drop for Broker {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn writer_loop(mut stream: TcpStream, outbox: Receiver<Vec<u8>>) {
    for bytes in outbox {
        if stream.write_all(&bytes).is_err() {
            let _ = stream.shutdown(Shutdown::Both);
            break;
        }
    }
}

fn serve_connection(stream: TcpStream, shared: Arc<Shared>, config: BrokerConfig) {
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_default();
    if let Err(e) = run_session(stream, &shared, config) {
        log::debug!("broker: session {peer} closed: {e}");
    }
}

fn violation(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

fn run_session(stream: TcpStream, shared: &Arc<Shared>, config: BrokerConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(config.connect_timeout))?;
    let mut reader = PacketReader::new(stream.try_clone()?);
    let connect = match reader.read_packet()? {
        Packet::Connect(c) => c,
        other => {
            return Err(violation(format!(
                "expected CONNECT, got type {}",
                other.kind()
            )))
        }
    };

    let id = shared.next_session.fetch_add(1, Ordering::Relaxed) + 1;
    let client_id = if connect.client_id.is_empty() {
        format!("anon-{id}")
    } else {
        connect.client_id.clone()
    };
    let (outbox, rx) = mpsc::sync_channel(config.queue_depth.max(1));
    let writer = {
        let stream = stream.try_clone()?;
        std::thread::Builder::new()
            .name("mqtt-writer".into())
            .spawn(move || writer_loop(stream, rx))?
    };

    // Register, superseding any live session with the same client id.
    let previous = {
        let mut by_client = shared.by_client.lock().expect("client lock");
        shared.sessions.write().expect("session lock").insert(
            id,
            Session {
                client_id: client_id.clone(),
                outbox: outbox.clone(),
                stream: stream.try_clone()?,
            },
        );
        by_client.insert(client_id.clone(), id)
    };
    if let Some(old) = previous {
        log::info!("broker: {client_id} reconnected, closing previous session");
        shared.remove_session(old);
    }
    shared.connections.fetch_add(1, Ordering::Relaxed);

    let send = |p: &Packet| -> io::Result<()> {
        let bytes = encode(p).map_err(|e| violation(e.to_string()))?;
        outbox
            .send(bytes)
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "writer gone"))
    };
    send(&Packet::ConnAck {
        session_present: false,
        return_code: 0,
    })?;

    let idle = (connect.keep_alive > 0)
        .then(|| Duration::from_millis(u64::from(connect.keep_alive) * 1500));
    stream.set_read_timeout(idle)?;

    let result = (|| -> io::Result<()> {
        loop {
            let packet = match reader.read_packet() {
                Ok(p) => p,
                Err(e)
                    if matches!(
                        e.kind(),
                        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                    ) =>
                {
                    return Err(io::Error::new(
                        io::ErrorKind::TimedOut,
                        "keep-alive expired",
                    ));
                }
                Err(e) => return Err(e),
            };
            match packet {
                Packet::Publish(p) => shared.fan_out(&p),
                Packet::Subscribe { packet_id, filters } => {
                    let mut codes = Vec::with_capacity(filters.len());
                    let mut subs = shared.subscriptions.write().expect("subscription lock");
                    for (filter, _qos) in filters {
                        if valid_filter(&filter) {
                            subs.entry(filter).or_default().insert(id);
                            codes.push(0);
                        } else {
                            codes.push(SUBACK_FAILURE);
                        }
                    }
                    drop(subs);
                    send(&Packet::SubAck {
                        packet_id,
                        return_codes: codes,
                    })?;
                }
                Packet::PingReq => send(&Packet::PingResp)?,
                Packet::Disconnect => return Ok(()),
                other => {
                    return Err(violation(format!(
                        "unexpected packet type {} from client",
                        other.kind()
                    )))
                }
            }
        }
    })();

    shared.remove_session(id);
    drop(outbox);
    let _ = writer.join();
    result
}
