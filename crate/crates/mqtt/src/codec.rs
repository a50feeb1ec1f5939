//! MQTT 3.1.1 framing for the packet subset the trigger link needs.
//!
//! Fixed header: packet type in the high nibble, flags in the low nibble,
//! then the remaining length as a 1-4 byte base-128 varint. Publish is QoS 0
//! only, so it never carries a packet id.

use std::io::{self, Read};

use thiserror::Error;

/// Largest remaining length a 4-byte varint can carry.
pub const MAX_REMAINING_LENGTH: usize = 268_435_455;

const PROTOCOL_NAME: &str = "MQTT";
const PROTOCOL_LEVEL: u8 = 4;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("remaining length {0} exceeds {MAX_REMAINING_LENGTH}")]
    TooLarge(usize),
    #[error("malformed packet: {0}")]
    Malformed(String),
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, CodecError> {
    Err(CodecError::Malformed(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Connect {
    pub client_id: String,
    pub keep_alive: u16,
    pub clean_session: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Publish {
    pub topic: String,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Packet {
    Connect(Connect),
    ConnAck {
        session_present: bool,
        return_code: u8,
    },
    Publish(Publish),
    Subscribe {
        packet_id: u16,
        filters: Vec<(String, u8)>,
    },
    SubAck {
        packet_id: u16,
        return_codes: Vec<u8>,
    },
    PingReq,
    PingResp,
    Disconnect,
}

impl Packet {
    pub fn publish(topic: impl Into<String>, payload: impl Into<Vec<u8>>) -> Self {
        Packet::Publish(Publish {
            topic: topic.into(),
            payload: payload.into(),
        })
    }

    /// Type nibble of the fixed header.
    pub fn kind(&self) -> u8 {
        match self {
            Packet::Connect(_) => 1,
            Packet::ConnAck { .. } => 2,
            Packet::Publish(_) => 3,
            Packet::Subscribe { .. } => 8,
            Packet::SubAck { .. } => 9,
            Packet::PingReq => 12,
            Packet::PingResp => 13,
            Packet::Disconnect => 14,
        }
    }

    /// Flags nibble of the fixed header. Subscribe has reserved bits 0010.
    pub fn flags(&self) -> u8 {
        match self {
            Packet::Subscribe { .. } => 0b0010,
            _ => 0,
        }
    }
}

pub fn encode_varint(mut value: usize, out: &mut Vec<u8>) -> Result<(), CodecError> {
    if value > MAX_REMAINING_LENGTH {
        return Err(CodecError::TooLarge(value));
    }
    loop {
        let mut byte = (value % 128) as u8;
        value /= 128;
        if value > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if value == 0 {
            return Ok(());
        }
    }
}

/// Decodes a remaining-length varint. `Ok(None)` means the input ends
/// mid-varint.
pub fn decode_varint(bytes: &[u8]) -> Result<Option<(usize, usize)>, CodecError> {
    let mut value = 0usize;
    let mut multiplier = 1usize;
    for (i, &b) in bytes.iter().enumerate() {
        if i == 4 {
            return malformed("remaining length longer than 4 bytes");
        }
        value += usize::from(b & 0x7F) * multiplier;
        if b & 0x80 == 0 {
            return Ok(Some((value, i + 1)));
        }
        multiplier *= 128;
    }
    if bytes.len() >= 4 {
        return malformed("remaining length longer than 4 bytes");
    }
    Ok(None)
}

fn put_str(s: &str, out: &mut Vec<u8>) -> Result<(), CodecError> {
    let len = u16::try_from(s.len())
        .map_err(|_| CodecError::Malformed(format!("string of {} bytes", s.len())))?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

fn valid_topic_name(topic: &str) -> bool {
    !topic.is_empty() && !topic.contains(['+', '#', '\0'])
}

pub fn encode(packet: &Packet) -> Result<Vec<u8>, CodecError> {
    let mut body = Vec::new();
    match packet {
        Packet::Connect(c) => {
            put_str(PROTOCOL_NAME, &mut body)?;
            body.push(PROTOCOL_LEVEL);
            body.push(if c.clean_session { 0b10 } else { 0 });
            body.extend_from_slice(&c.keep_alive.to_be_bytes());
            put_str(&c.client_id, &mut body)?;
        }
        Packet::ConnAck {
            session_present,
            return_code,
        } => {
            body.push(u8::from(*session_present));
            body.push(*return_code);
        }
        Packet::Publish(p) => {
            if !valid_topic_name(&p.topic) {
                return malformed(format!("invalid topic name {:?}", p.topic));
            }
            put_str(&p.topic, &mut body)?;
            body.extend_from_slice(&p.payload);
        }
        Packet::Subscribe { packet_id, filters } => {
            if filters.is_empty() {
                return malformed("subscribe without filters");
            }
            body.extend_from_slice(&packet_id.to_be_bytes());
            for (filter, qos) in filters {
                if filter.is_empty() || *qos > 2 {
                    return malformed("invalid subscription");
                }
                put_str(filter, &mut body)?;
                body.push(*qos);
            }
        }
        Packet::SubAck {
            packet_id,
            return_codes,
        } => {
            body.extend_from_slice(&packet_id.to_be_bytes());
            body.extend_from_slice(return_codes);
        }
        Packet::PingReq | Packet::PingResp | Packet::Disconnect => {}
    }
    let mut out = Vec::with_capacity(body.len() + 5);
    out.push(packet.kind() << 4 | packet.flags());
    encode_varint(body.len(), &mut out)?;
    out.extend_from_slice(&body);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decoded {
    /// A complete packet and the number of bytes it used.
    Packet(Packet, usize),
    /// The buffer holds part of a packet; at least this many bytes in total are needed.
    NeedMoreBytes(usize),
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.bytes.len() - self.pos < n {
            return malformed("field runs past the end of the packet");
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    fn string(&mut self) -> Result<String, CodecError> {
        let len = usize::from(self.u16()?);
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| CodecError::Malformed("string is not valid UTF-8".into()))
    }

    fn rest(&mut self) -> &'a [u8] {
        let s = &self.bytes[self.pos..];
        self.pos = self.bytes.len();
        s
    }

    fn finish(&self) -> Result<(), CodecError> {
        if self.pos != self.bytes.len() {
            return malformed("trailing bytes in packet");
        }
        Ok(())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Decoded, CodecError> {
    let Some(&first) = bytes.first() else {
        return Ok(Decoded::NeedMoreBytes(2));
    };
    let (kind, flags) = (first >> 4, first & 0x0F);
    if !matches!(kind, 1 | 2 | 3 | 8 | 9 | 12 | 13 | 14) {
        return malformed(format!("unsupported packet type {kind}"));
    }
    let Some((len, len_bytes)) = decode_varint(&bytes[1..])? else {
        return Ok(Decoded::NeedMoreBytes(bytes.len() + 1));
    };
    let total = 1 + len_bytes + len;
    if bytes.len() < total {
        return Ok(Decoded::NeedMoreBytes(total));
    }
    let body = &bytes[1 + len_bytes..total];
    let expected_flags = if kind == 8 { 0b0010 } else { 0 };
    if flags != expected_flags {
        let what = if kind == 3 {
            "only QoS 0 publish without retain or dup is supported"
        } else {
            "reserved flags"
        };
        return malformed(format!("{what} (type {kind}, flags {flags:#06b})"));
    }
    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    let packet = match kind {
        1 => {
            if c.string()? != PROTOCOL_NAME {
                return malformed("protocol name is not MQTT");
            }
            let level = c.u8()?;
            if level != PROTOCOL_LEVEL {
                return malformed(format!("protocol level {level}"));
            }
            let cf = c.u8()?;
            if cf & !0b10 != 0 {
                return malformed("will, username and password are not supported");
            }
            let keep_alive = c.u16()?;
            let client_id = c.string()?;
            Packet::Connect(Connect {
                client_id,
                keep_alive,
                clean_session: cf & 0b10 != 0,
            })
        }
        2 => {
            let ack = c.u8()?;
            if ack & !1 != 0 {
                return malformed("reserved connack flags");
            }
            Packet::ConnAck {
                session_present: ack == 1,
                return_code: c.u8()?,
            }
        }
        3 => {
            let topic = c.string()?;
            if !valid_topic_name(&topic) {
                return malformed(format!("invalid topic name {topic:?}"));
            }
            Packet::Publish(Publish {
                topic,
                payload: c.rest().to_vec(),
            })
        }
        8 => {
            let packet_id = c.u16()?;
            let mut filters = Vec::new();
            while c.pos < body.len() {
                let filter = c.string()?;
                let qos = c.u8()?;
                if filter.is_empty() || qos > 2 {
                    return malformed("invalid subscription");
                }
                filters.push((filter, qos));
            }
            if filters.is_empty() {
                return malformed("subscribe without filters");
            }
            Packet::Subscribe { packet_id, filters }
        }
        9 => {
            let packet_id = c.u16()?;
            Packet::SubAck {
                packet_id,
                return_codes: c.rest().to_vec(),
            }
        }
        12 => Packet::PingReq,
        13 => Packet::PingResp,
        _ => Packet::Disconnect,
    };
    c.finish()?;
    Ok(Decoded::Packet(packet, total))
}

/// Incremental decoder for a byte stream.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next complete packet, if one is buffered.
    pub fn next_packet(&mut self) -> Result<Option<Packet>, CodecError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        match decode(&self.buf)? {
            Decoded::Packet(p, used) => {
                self.buf.drain(..used);
                Ok(Some(p))
            }
            Decoded::NeedMoreBytes(_) => Ok(None),
        }
    }
}

/// Reads whole packets from a blocking reader.
pub struct PacketReader<R> {
    inner: R,
    decoder: StreamDecoder,
    chunk: Box<[u8]>,
}

impl<R: Read> PacketReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            decoder: StreamDecoder::new(),
            chunk: vec![0; 4096].into_boxed_slice(),
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Blocks until a packet arrives. End of stream is `UnexpectedEof`;
    /// codec errors surface as `InvalidData`.
    pub fn read_packet(&mut self) -> io::Result<Packet> {
        loop {
            if let Some(p) = self
                .decoder
                .next_packet()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?
            {
                return Ok(p);
            }
            let n = self.inner.read(&mut self.chunk)?;
            if n == 0 {
                return Err(io::Error::new(
                    io::ErrorKind::UnexpectedEof,
                    "connection closed",
                ));
            }
            self.decoder.push(&self.chunk[..n]);
        }
    }
}
