//! The trigger contract: a foot-switch client publishes "ON"/"OFF" and the
//! controller listens.

use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::client::{Client, ClientError, ClientOptions};
use crate::codec::Publish;

pub const DEFAULT_TOPIC: &str = "sls/trigger";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerState {
    On,
    Off,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("trigger payload must be exactly \"ON\" or \"OFF\", got {0:?}")]
pub struct BadTriggerPayload(pub String);

impl TriggerState {
    pub fn as_payload(self) -> &'static [u8] {
        match self {
            TriggerState::On => b"ON",
            TriggerState::Off => b"OFF",
        }
    }

    pub fn from_payload(payload: &[u8]) -> Result<Self, BadTriggerPayload> {
        match payload {
            b"ON" => Ok(TriggerState::On),
            b"OFF" => Ok(TriggerState::Off),
            other => Err(BadTriggerPayload(
                String::from_utf8_lossy(other).into_owned(),
            )),
        }
    }
}

impl fmt::Display for TriggerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if *self == TriggerState::On {
            "ON"
        } else {
            "OFF"
        })
    }
}

impl std::str::FromStr for TriggerState {
    type Err = BadTriggerPayload;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::from_payload(s.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriggerMessage {
    pub topic: String,
    pub state: TriggerState,
}

impl TriggerMessage {
    /// Application-layer filter: the topic must match and the payload must be exact.
    pub fn from_publish(publish: &Publish, topic: &str) -> Option<Self> {
        if publish.topic != topic {
            return None;
        }
        match TriggerState::from_payload(&publish.payload) {
            Ok(state) => Some(Self {
                topic: publish.topic.clone(),
                state,
            }),
            Err(e) => {
                log::warn!("dropping message on {}: {e}", publish.topic);
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScheduleEntry {
    /// Offset from the start of the schedule.
    pub at: Duration,
    pub state: TriggerState,
}

#[derive(Debug, Clone)]
pub struct Backoff {
    pub initial: Duration,
    pub max: Duration,
    /// Give up reconnecting after this much time without a connection.
    pub give_up_after: Duration,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            initial: Duration::from_millis(50),
            max: Duration::from_secs(1),
            give_up_after: Duration::from_secs(10),
        }
    }
}

/// Connects with exponential backoff until `give_up_after` elapses.
pub fn connect_with_retry(
    endpoint: &str,
    options: &ClientOptions,
    backoff: &Backoff,
) -> Result<(Client, u32), ClientError> {
    let start = Instant::now();
    let mut delay = backoff.initial;
    let mut attempts = 0;
    loop {
        match Client::connect(endpoint, options) {
            Ok(c) => return Ok((c, attempts)),
            Err(e) => {
                attempts += 1;
                if start.elapsed() + delay > backoff.give_up_after {
                    log::warn!("giving up on {endpoint} after {attempts} attempts: {e}");
                    return Err(e);
                }
                log::debug!("connect to {endpoint} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
                delay = (delay * 2).min(backoff.max);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TriggerRun {
    pub published: usize,
    /// Failed connection attempts along the way.
    pub retries: u32,
}

/// Emulates the foot switch: connects and publishes each scheduled state at
/// its offset from the call. A lost connection is re-established with
/// backoff and the pending entry is sent again.
pub fn trigger_client(
    endpoint: &str,
    topic: &str,
    schedule: &[ScheduleEntry],
    options: &ClientOptions,
    backoff: &Backoff,
) -> Result<TriggerRun, ClientError> {
    let start = Instant::now();
    let mut run = TriggerRun::default();
    let (mut client, retries) = connect_with_retry(endpoint, options, backoff)?;
    run.retries += retries;
    for entry in schedule {
        if let Some(wait) = entry.at.checked_sub(start.elapsed()) {
            std::thread::sleep(wait);
        }
        loop {
            match client.publish(topic, entry.state.as_payload()) {
                Ok(()) => break,
                Err(ClientError::ConnectionLost) => {
                    let (c, retries) = connect_with_retry(endpoint, options, backoff)?;
                    client = c;
                    run.retries += retries + 1;
                }
                Err(e) => return Err(e),
            }
        }
        run.published += 1;
    }
    // Flush before the socket closes.
    client.disconnect()?;
    Ok(run)
}

/// Background subscriber that reconnects on its own and hands every valid
/// trigger state to a callback.
pub struct TriggerListener {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
    connected: Arc<AtomicBool>,
}

impl TriggerListener {
    pub fn spawn<F>(
        endpoint: String,
        topic: String,
        options: ClientOptions,
        backoff: Backoff,
        mut on_trigger: F,
    ) -> Self
    where
        F: FnMut(TriggerState) + Send + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        let connected = Arc::new(AtomicBool::new(false));
        let handle = {
            let stop = stop.clone();
            let connected = connected.clone();
            std::thread::spawn(move || {
                let forever = Backoff {
                    give_up_after: Duration::MAX,
                    ..backoff
                };
                while !stop.load(Ordering::SeqCst) {
                    let mut client = match Client::connect(&endpoint, &options) {
                        Ok(c) => c,
                        Err(e) => {
                            log::debug!("trigger listener: {e}");
                            std::thread::sleep(forever.initial);
                            continue;
                        }
                    };
                    if let Err(e) = client.subscribe(&topic) {
                        log::warn!("trigger listener: subscribe failed: {e}");
                        std::thread::sleep(forever.initial);
                        continue;
                    }
                    connected.store(true, Ordering::SeqCst);
                    log::info!("listening for triggers on {topic} at {endpoint}");
                    while !stop.load(Ordering::SeqCst) {
                        match client.recv_timeout(Duration::from_millis(20)) {
                            Ok(Some(p)) => {
                                if let Some(m) = TriggerMessage::from_publish(&p, &topic) {
                                    on_trigger(m.state);
                                }
                            }
                            Ok(None) => {}
                            Err(_) => break,
                        }
                    }
                    connected.store(false, Ordering::SeqCst);
                    if !stop.load(Ordering::SeqCst) {
                        log::warn!("trigger listener lost the broker; reconnecting");
                        std::thread::sleep(forever.initial);
                    }
                }
            })
        };
        Self {
            stop,
            handle: Some(handle),
            connected,
        }
    }

    /// `true` once subscribed.
    pub fn is_connected(&self) -> bool {
        self.connected.load(Ordering::SeqCst)
    }

    /// Blocks until subscribed or `timeout` passes.
    pub fn wait_connected(&self, timeout: Duration) -> bool {
        let start = Instant::now();
        while !self.is_connected() {
            if start.elapsed() > timeout {
                return false;
            }
            std::thread::sleep(Duration::from_millis(5));
        }
        true
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for TriggerListener {
    fn drop(&mut self) {
        self.stop();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payload_filter_is_exact() {
        assert_eq!(TriggerState::from_payload(b"ON"), Ok(TriggerState::On));
        assert_eq!(TriggerState::from_payload(b"OFF"), Ok(TriggerState::Off));
        for bad in [&b"on"[..], b"ON ", b"", b"1", b"OFFF"] {
            assert!(TriggerState::from_payload(bad).is_err());
        }
    }

    #[test]
    fn message_requires_matching_topic() {
        let p = Publish {
            topic: "sls/other".into(),
            payload: b"ON".to_vec(),
        };
        assert_eq!(TriggerMessage::from_publish(&p, DEFAULT_TOPIC), None);
        let p = Publish {
            topic: DEFAULT_TOPIC.into(),
            payload: b"ON".to_vec(),
        };
        assert_eq!(
            TriggerMessage::from_publish(&p, DEFAULT_TOPIC)
                .unwrap()
                .state,
            TriggerState::On
        );
    }
}
