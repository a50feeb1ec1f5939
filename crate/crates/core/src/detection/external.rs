//! Out-of-process detector protocol.
//!
//! A neural detector can run as a separate process and answer requests on a
//! local TCP socket. All integers are big-endian.
//!
//! Request:
//!
//! | bytes | field                               |
//! |-------|-------------------------------------|
//! | 1     | schema version (`1`)                |
//! | 4     | body length `n` (u32)               |
//! | 2     | frame width (u16)                   |
//! | 2     | frame height (u16)                  |
//! | n - 4 | raw RGB, row-major, 3 bytes/pixel   |
//!
//! Response:
//!
//! | bytes | field                               |
//! |-------|-------------------------------------|
//! | 1     | schema version (`1`)                |
//! | 4     | body length (u32, always 25)        |
//! | 1     | found flag (0 or 1)                 |
//! | 8     | center x (f64, cropped-image px)    |
//! | 8     | center y (f64)                      |
//! | 8     | confidence (f64, `[0, 1]`)          |
//!
//! The response carries no bounding box, so detections from an external
//! model report a 1x1 box around the center.

use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use super::{BBox, DetectError, Detection, MarkerDetector};
use crate::frame::Frame;

pub const SCHEMA_VERSION: u8 = 1;
const RESPONSE_BODY_LEN: u32 = 25;
const MAX_FRAME_BYTES: usize = 4096 * 4096 * 3;

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported schema version {0}")]
    Version(u8),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub fn encode_request(frame: &Frame) -> Result<Vec<u8>, ExternalError> {
    let (w, h) = (frame.width(), frame.height());
    if w > u32::from(u16::MAX) || h > u32::from(u16::MAX) {
        return Err(ExternalError::Protocol(format!("frame {w}x{h} too large")));
    }
    let body_len = 4 + frame.pixels().len();
    let mut out = Vec::with_capacity(5 + body_len);
    out.push(SCHEMA_VERSION);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.extend_from_slice(&(w as u16).to_be_bytes());
    out.extend_from_slice(&(h as u16).to_be_bytes());
    out.extend_from_slice(frame.pixels());
    Ok(out)
}

fn read_envelope(stream: &mut impl Read, max_len: usize) -> Result<Vec<u8>, ExternalError> {
    let mut head = [0u8; 5];
    stream.read_exact(&mut head)?;
    if head[0] != SCHEMA_VERSION {
        return Err(ExternalError::Version(head[0]));
    }
    let len = u32::from_be_bytes([head[1], head[2], head[3], head[4]]) as usize;
    if len > max_len {
        return Err(ExternalError::Protocol(format!(
            "body length {len} exceeds {max_len}"
        )));
    }
    let mut body = vec![0u8; len];
    stream.read_exact(&mut body)?;
    Ok(body)
}

pub fn read_request(stream: &mut impl Read) -> Result<Frame, ExternalError> {
    let body = read_envelope(stream, MAX_FRAME_BYTES + 4)?;
    if body.len() < 4 {
        return Err(ExternalError::Protocol(
            "request body shorter than header".into(),
        ));
    }
    let w = u32::from(u16::from_be_bytes([body[0], body[1]]));
    let h = u32::from(u16::from_be_bytes([body[2], body[3]]));
    Frame::new(w, h, body[4..].to_vec(), 0).map_err(|e| ExternalError::Protocol(e.to_string()))
}

pub fn encode_response(detection: Option<&Detection>) -> Vec<u8> {
    let mut out = Vec::with_capacity(30);
    out.push(SCHEMA_VERSION);
    out.extend_from_slice(&RESPONSE_BODY_LEN.to_be_bytes());
    let (found, cx, cy, conf) = match detection {
        Some(d) => (1u8, d.center_x, d.center_y, d.confidence),
        None => (0u8, 0.0, 0.0, 0.0),
    };
    out.push(found);
    out.extend_from_slice(&cx.to_be_bytes());
    out.extend_from_slice(&cy.to_be_bytes());
    out.extend_from_slice(&conf.to_be_bytes());
    out
}

pub fn read_response(
    stream: &mut impl Read,
    frame: &Frame,
) -> Result<Option<Detection>, ExternalError> {
    let body = read_envelope(stream, RESPONSE_BODY_LEN as usize)?;
    if body.len() != RESPONSE_BODY_LEN as usize {
        return Err(ExternalError::Protocol(format!(
            "response body is {} bytes",
            body.len()
        )));
    }
    let f64_at = |i: usize| f64::from_be_bytes(body[i..i + 8].try_into().expect("8 bytes"));
    match body[0] {
        0 => Ok(None),
        1 => {
            let (cx, cy, confidence) = (f64_at(1), f64_at(9), f64_at(17));
            let (w, h) = (f64::from(frame.width()), f64::from(frame.height()));
            if !(0.0..=w).contains(&cx)
                || !(0.0..=h).contains(&cy)
                || !(0.0..=1.0).contains(&confidence)
            {
                return Err(ExternalError::Protocol(format!(
                    "detection ({cx}, {cy}, {confidence}) out of range"
                )));
            }
            let bx = (cx.floor() as u32).min(frame.width().saturating_sub(1));
            let by = (cy.floor() as u32).min(frame.height().saturating_sub(1));
            Ok(Some(Detection {
                center_x: cx,
                center_y: cy,
                confidence,
                bbox: BBox {
                    x: bx,
                    y: by,
                    w: 1,
                    h: 1,
                },
            }))
        }
        other => Err(ExternalError::Protocol(format!("found flag {other}"))),
    }
}

/// Client side: sends each frame to a detector process and waits for the answer.
#[derive(Debug)]
pub struct ExternalDetector {
    endpoint: String,
    timeout: Duration,
    stream: Option<TcpStream>,
}

impl ExternalDetector {
    pub fn new(endpoint: String, timeout: Duration) -> Self {
        Self {
            endpoint,
            timeout,
            stream: None,
        }
    }

    fn connect(&self) -> Result<TcpStream, ExternalError> {
        let addr =
            self.endpoint.to_socket_addrs()?.next().ok_or_else(|| {
                ExternalError::Protocol(format!("cannot resolve {}", self.endpoint))
            })?;
        let stream = TcpStream::connect_timeout(&addr, self.timeout)?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        Ok(stream)
    }

    fn round_trip(
        &mut self,
        request: &[u8],
        frame: &Frame,
    ) -> Result<Option<Detection>, ExternalError> {
        if self.stream.is_none() {
            self.stream = Some(self.connect()?);
        }
        let stream = self.stream.as_mut().expect("connected above");
        stream.write_all(request)?;
        read_response(stream, frame)
    }
}

impl MarkerDetector for ExternalDetector {
    fn detect(&mut self, frame: &Frame) -> Result<Option<Detection>, DetectError> {
        let request = encode_request(frame)?;
        match self.round_trip(&request, frame) {
            Ok(d) => Ok(d),
            Err(ExternalError::Io(e)) => {
                // One retry on a fresh connection; the server may have restarted.
                log::warn!("external detector connection failed ({e}); reconnecting");
                self.stream = None;
                self.round_trip(&request, frame).map_err(|e| {
                    self.stream = None;
                    DetectError::External(e)
                })
            }
            Err(e) => {
                self.stream = None;
                Err(e.into())
            }
        }
    }
}

/// Serves detection requests with any [`MarkerDetector`]. Each connection is
/// handled on its own thread with a fresh detector from `factory`.
pub struct DetectorServer {
    addr: std::net::SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl DetectorServer {
    pub fn spawn<F, D>(bind: &str, factory: F) -> io::Result<Self>
    where
        F: Fn() -> D + Send + Sync + 'static,
        D: MarkerDetector + 'static,
    {
        let listener = TcpListener::bind(bind)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let factory = Arc::new(factory);
        let stop_flag = stop.clone();
        let handle = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(mut conn) = conn else { continue };
                let factory = factory.clone();
                std::thread::spawn(move || {
                    let mut detector = factory();
                    loop {
                        let frame = match read_request(&mut conn) {
                            Ok(f) => f,
                            Err(ExternalError::Io(e))
                                if e.kind() == io::ErrorKind::UnexpectedEof =>
                            {
                                break
                            }
                            Err(e) => {
                                log::warn!("detector server: {e}");
                                break;
                            }
                        };
                        let detection = detector.detect(&frame).ok().flatten();
                        if conn
                            .write_all(&encode_response(detection.as_ref()))
                            .is_err()
                        {
                            break;
                        }
                    }
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.addr
    }
}

impl Drop for DetectorServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
