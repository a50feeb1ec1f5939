//! Blocking client with a background reader thread.

use std::io::{self, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::broker::SUBACK_FAILURE;
use crate::codec::{encode, CodecError, Connect, Packet, PacketReader, Publish};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("cannot resolve {0}")]
    Resolve(String),
    #[error("connection refused by broker (return code {0})")]
    Refused(u8),
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection lost")]
    ConnectionLost,
    #[error("subscription to {0:?} rejected")]
    SubscribeRejected(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

#[derive(Debug, Clone)]
pub struct ClientOptions {
    pub client_id: String,
    /// Seconds; 0 disables keep-alive pings.
    pub keep_alive: u16,
    pub timeout: Duration,
}

impl ClientOptions {
    pub fn new(client_id: impl Into<String>) -> Self {
        Self {
            client_id: client_id.into(),
            keep_alive: 30,
            timeout: Duration::from_secs(2),
        }
    }
}

pub fn resolve(endpoint: &str) -> Result<SocketAddr, ClientError> {
    endpoint
        .to_socket_addrs()
        .map_err(|_| ClientError::Resolve(endpoint.to_owned()))?
        .next()
        .ok_or_else(|| ClientError::Resolve(endpoint.to_owned()))
}

pub struct Client {
    writer: Arc<Mutex<TcpStream>>,
    messages: Receiver<Publish>,
    acks: Receiver<(u16, Vec<u8>)>,
    alive: Arc<AtomicBool>,
    reader: Option<JoinHandle<()>>,
    pinger: Option<JoinHandle<()>>,
    next_packet_id: u16,
    timeout: Duration,
}

fn send_on(stream: &Mutex<TcpStream>, packet: &Packet) -> Result<(), ClientError> {
    let bytes = encode(packet)?;
    stream.lock().expect("writer lock").write_all(&bytes)?;
    Ok(())
}

impl Client {
    pub fn connect(endpoint: &str, options: &ClientOptions) -> Result<Self, ClientError> {
        let addr = resolve(endpoint)?;
        let stream = TcpStream::connect_timeout(&addr, options.timeout)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(options.timeout))?;
        let writer = Arc::new(Mutex::new(stream.try_clone()?));
        send_on(
            &writer,
            &Packet::Connect(Connect {
                client_id: options.client_id.clone(),
                keep_alive: options.keep_alive,
                clean_session: true,
            }),
        )?;
        let mut reader = PacketReader::new(stream);
        match reader.read_packet() {
            Ok(Packet::ConnAck { return_code: 0, .. }) => {}
            Ok(Packet::ConnAck { return_code, .. }) => {
                return Err(ClientError::Refused(return_code))
            }
            Ok(other) => {
                return Err(ClientError::Protocol(format!(
                    "expected CONNACK, got type {}",
                    other.kind()
                )))
            }
            Err(e)
                if matches!(
                    e.kind(),
                    io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
                ) =>
            {
                return Err(ClientError::Timeout("CONNACK"))
            }
            Err(e) => return Err(e.into()),
        }
        reader.get_ref().set_read_timeout(None)?;

        let alive = Arc::new(AtomicBool::new(true));
        let (msg_tx, messages) = mpsc::channel();
        let (ack_tx, acks) = mpsc::channel();
        let reader_thread = {
            let alive = alive.clone();
            std::thread::Builder::new()
                .name("mqtt-client-reader".into())
                .spawn(move || {
                    loop {
                        match reader.read_packet() {
                            Ok(Packet::Publish(p)) => {
                                if msg_tx.send(p).is_err() {
                                    break;
                                }
                            }
                            Ok(Packet::SubAck {
                                packet_id,
                                return_codes,
                            }) => {
                                let _ = ack_tx.send((packet_id, return_codes));
                            }
                            Ok(Packet::PingResp) => {}
                            Ok(other) => {
                                log::warn!("mqtt client: unexpected packet type {}", other.kind());
                                break;
                            }
                            Err(_) => break,
                        }
                    }
                    alive.store(false, Ordering::SeqCst);
                    let _ = reader.get_ref().shutdown(Shutdown::Both);
                })?
        };
        let pinger = (options.keep_alive > 0)
            .then(|| {
                let alive = alive.clone();
                let writer = writer.clone();
                let period = Duration::from_millis(u64::from(options.keep_alive) * 500);
                std::thread::Builder::new()
                    .name("mqtt-client-ping".into())
                    .spawn(move || {
                        let tick = Duration::from_millis(20);
                        let mut waited = Duration::ZERO;
                        while alive.load(Ordering::SeqCst) {
                            std::thread::sleep(tick);
                            waited += tick;
                            if waited >= period {
                                waited = Duration::ZERO;
                                if send_on(&writer, &Packet::PingReq).is_err() {
                                    break;
                                }
                            }
                        }
                    })
            })
            .transpose()?;
        Ok(Self {
            writer,
            messages,
            acks,
            alive,
            reader: Some(reader_thread),
            pinger,
            next_packet_id: 0,
            timeout: options.timeout,
        })
    }

    pub fn is_connected(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    fn send(&self, packet: &Packet) -> Result<(), ClientError> {
        if !self.is_connected() {
            return Err(ClientError::ConnectionLost);
        }
        send_on(&self.writer, packet).map_err(|e| match e {
            ClientError::Io(_) => ClientError::ConnectionLost,
            other => other,
        })
    }

    pub fn publish(&self, topic: &str, payload: &[u8]) -> Result<(), ClientError> {
        self.send(&Packet::publish(topic, payload.to_vec()))
    }

    /// Subscribes at QoS 0 and waits for the broker's acknowledgement.
    pub fn subscribe(&mut self, filter: &str) -> Result<(), ClientError> {
        self.next_packet_id = self.next_packet_id.wrapping_add(1).max(1);
        let packet_id = self.next_packet_id;
        self.send(&Packet::Subscribe {
            packet_id,
            filters: vec![(filter.to_owned(), 0)],
        })?;
        loop {
            match self.acks.recv_timeout(self.timeout) {
                Ok((id, codes)) if id == packet_id => {
                    return if codes.first().is_some_and(|&c| c != SUBACK_FAILURE) {
                        Ok(())
                    } else {
                        Err(ClientError::SubscribeRejected(filter.to_owned()))
                    };
                }
                Ok(_) => {}
                Err(RecvTimeoutError::Timeout) => return Err(ClientError::Timeout("SUBACK")),
                Err(RecvTimeoutError::Disconnected) => return Err(ClientError::ConnectionLost),
            }
        }
    }

    /// Waits up to `timeout` for the next message. `Ok(None)` on timeout.
    pub fn recv_timeout(&self, timeout: Duration) -> Result<Option<Publish>, ClientError> {
        match self.messages.recv_timeout(timeout) {
            Ok(p) => Ok(Some(p)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(ClientError::ConnectionLost),
        }
    }

    pub fn try_recv(&self) -> Result<Option<Publish>, ClientError> {
        self.recv_timeout(Duration::ZERO)
    }

    /// Sends DISCONNECT and closes the socket.
    pub fn disconnect(mut self) -> Result<(), ClientError> {
        let result = self.send(&Packet::Disconnect);
        self.close();
        result
    }

    fn close(&mut self) {
        self.alive.store(false, Ordering::SeqCst);
        let _ = self
            .writer
            .lock()
            .expect("writer lock")
            .shutdown(Shutdown::Both);
        if let Some(h) = self.reader.take() {
            let _ = h.join();
        }
        if let Some(h) = self.pinger.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Client {
    fn drop(&mut self) {
        self.close();
    }
}
