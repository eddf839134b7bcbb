//! Binary message codec shared by the TCP and WebSocket transports.
//!
//! A message *body* is one type byte followed by the payload for that type.
//! All integers are little-endian and strings carry a `u16` byte length
//! followed by UTF-8. Over TCP every body is preceded by a 4-byte
//! little-endian body length; over WebSocket one binary message carries
//! exactly one body.
//!
//! Encoding is canonical: a decoded message re-encodes to the identical
//! bytes, so fields with a fixed value (the FRAME reserved byte, flag bits
//! that have no meaning) are rejected by the decoder when set.

use std::fmt;

use thiserror::Error;

use crate::model::{
    check_description_text, validate_frame, Annotation, AnnotationKind, Confidence, Frame,
    FrameViolation, NormCoord, PixelFormat, Priority, ProcessResult, TimingBreakdown,
    MAX_ANNOTATIONS,
};

pub const PROTOCOL_VERSION: u8 = 1;
/// Largest accepted body, in bytes.
pub const MAX_BODY_LEN: usize = 16 * 1024 * 1024;
/// Size of the TCP length prefix.
pub const LENGTH_PREFIX_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0x01,
    HelloAck = 0x02,
    ListProcessors = 0x03,
    ProcessorList = 0x04,
    SetProcessor = 0x05,
    SetProcessorAck = 0x06,
    Frame = 0x07,
    Result = 0x08,
    Error = 0x09,
    Ping = 0x0A,
    Pong = 0x0B,
    StatsRequest = 0x0C,
    Stats = 0x0D,
    SessionListRequest = 0x0E,
    SessionList = 0x0F,
    Subscribe = 0x10,
    SubscribeAck = 0x11,
}

impl MessageType {
    pub fn from_code(code: u8) -> Option<Self> {
        use MessageType::*;
        Some(match code {
            0x01 => Hello,
            0x02 => HelloAck,
            0x03 => ListProcessors,
            0x04 => ProcessorList,
            0x05 => SetProcessor,
            0x06 => SetProcessorAck,
            0x07 => Frame,
            0x08 => Result,
            0x09 => Error,
            0x0A => Ping,
            0x0B => Pong,
            0x0C => StatsRequest,
            0x0D => Stats,
            0x0E => SessionListRequest,
            0x0F => SessionList,
            0x10 => Subscribe,
            0x11 => SubscribeAck,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Role {
    Source = 0,
    Console = 1,
}

impl Role {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::Source),
            1 => Some(Role::Console),
            _ => None,
        }
    }
}

/// Status carried by SET_PROCESSOR_ACK and SUBSCRIBE_ACK.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum AckStatus {
    Ok = 0,
    UnknownId = 1,
    BadOptions = 2,
    NoSuchSession = 3,
    NotPermitted = 4,
}

impl AckStatus {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(AckStatus::Ok),
            1 => Some(AckStatus::UnknownId),
            2 => Some(AckStatus::BadOptions),
            3 => Some(AckStatus::NoSuchSession),
            4 => Some(AckStatus::NotPermitted),
            _ => None,
        }
    }

    fn valid_for_subscribe(self) -> bool {
        matches!(self, AckStatus::Ok | AckStatus::NoSuchSession)
    }
}

impl fmt::Display for AckStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AckStatus::Ok => "ok",
            AckStatus::UnknownId => "unknown processor",
            AckStatus::BadOptions => "bad options",
            AckStatus::NoSuchSession => "no such session",
            AckStatus::NotPermitted => "not permitted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ErrorCode {
    Malformed = 1,
    UnsupportedVersion = 2,
    FrameTooLarge = 3,
    UnknownProcessor = 4,
    Internal = 5,
    Limit = 6,
}

impl ErrorCode {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(ErrorCode::Malformed),
            2 => Some(ErrorCode::UnsupportedVersion),
            3 => Some(ErrorCode::FrameTooLarge),
            4 => Some(ErrorCode::UnknownProcessor),
            5 => Some(ErrorCode::Internal),
            6 => Some(ErrorCode::Limit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessorEntry {
    pub id: String,
    pub display_name: String,
    /// Flag bit 0: the processor calls a remote network service.
    pub remote: bool,
}

/// FRAME payload as carried on the wire. Geometry is not validated here;
/// see [`FrameMsg::to_frame`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMsg {
    pub seq: u32,
    pub capture_ts_us: u64,
    pub width: u16,
    pub height: u16,
    pub format: u8,
    pub payload: Vec<u8>,
}

impl FrameMsg {
    pub fn from_frame(frame: &Frame) -> Self {
        FrameMsg {
            seq: frame.seq(),
            capture_ts_us: frame.capture_ts_us(),
            width: frame.width() as u16,
            height: frame.height() as u16,
            format: frame.format().code(),
            payload: frame.pixels().to_vec(),
        }
    }

    pub fn validate(&self) -> Result<PixelFormat, FrameViolation> {
        validate_frame(
            self.width as u32,
            self.height as u32,
            self.format,
            self.payload.len(),
        )
    }

    pub fn to_frame(self) -> Result<Frame, FrameViolation> {
        let format = self.validate()?;
        Frame::new(
            self.seq,
            self.capture_ts_us,
            self.width as u32,
            self.height as u32,
            format,
            self.payload,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireDescription {
    pub priority: Priority,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResultMsg {
    pub frame_seq: u32,
    pub processor_id: String,
    pub timing: TimingBreakdown,
    pub annotations: Vec<Annotation>,
    pub description: Option<WireDescription>,
}

impl ResultMsg {
    pub fn from_result(result: &ProcessResult) -> Self {
        ResultMsg {
            frame_seq: result.frame_seq,
            processor_id: result.processor.as_str().to_owned(),
            timing: result.timing,
            annotations: result.annotations.clone(),
            description: result.description.as_ref().map(|d| WireDescription {
                priority: d.priority,
                text: d.text.clone(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsMsg {
    pub session_id: u32,
    pub frames_received: u64,
    pub frames_processed: u64,
    pub frames_dropped: u64,
    pub descriptions_suppressed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionEntry {
    pub session_id: u32,
    pub name: String,
    pub current_processor: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMessage {
    Hello { version: u8, role: Role, name: String },
    HelloAck { session_id: u32, server_version: u8 },
    ListProcessors,
    ProcessorList(Vec<ProcessorEntry>),
    SetProcessor { target: u32, id: String, options: String },
    SetProcessorAck { target: u32, id: String, status: AckStatus },
    Frame(FrameMsg),
    Result(ResultMsg),
    Error { code: ErrorCode, message: String },
    Ping([u8; 8]),
    Pong([u8; 8]),
    StatsRequest { target: u32 },
    Stats(StatsMsg),
    SessionListRequest,
    SessionList(Vec<SessionEntry>),
    Subscribe { target: u32 },
    SubscribeAck { target: u32, status: AckStatus },
}

impl WireMessage {
    pub fn message_type(&self) -> MessageType {
        match self {
            WireMessage::Hello { .. } => MessageType::Hello,
            WireMessage::HelloAck { .. } => MessageType::HelloAck,
            WireMessage::ListProcessors => MessageType::ListProcessors,
            WireMessage::ProcessorList(_) => MessageType::ProcessorList,
            WireMessage::SetProcessor { .. } => MessageType::SetProcessor,
            WireMessage::SetProcessorAck { .. } => MessageType::SetProcessorAck,
            WireMessage::Frame(_) => MessageType::Frame,
            WireMessage::Result(_) => MessageType::Result,
            WireMessage::Error { .. } => MessageType::Error,
            WireMessage::Ping(_) => MessageType::Ping,
            WireMessage::Pong(_) => MessageType::Pong,
            WireMessage::StatsRequest { .. } => MessageType::StatsRequest,
            WireMessage::Stats(_) => MessageType::Stats,
            WireMessage::SessionListRequest => MessageType::SessionListRequest,
            WireMessage::SessionList(_) => MessageType::SessionList,
            WireMessage::Subscribe { .. } => MessageType::Subscribe,
            WireMessage::SubscribeAck { .. } => MessageType::SubscribeAck,
        }
    }

    pub fn error(code: ErrorCode, message: impl Into<String>) -> Self {
        WireMessage::Error {
            code,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("{field} is {len} bytes, limit 65535")]
    StringTooLong { field: &'static str, len: usize },
    #[error("{field} count {count} exceeds {max}")]
    TooMany {
        field: &'static str,
        count: usize,
        max: usize,
    },
    #[error("body of {0} bytes exceeds the 16 MiB cap")]
    BodyTooLarge(usize),
    #[error("invalid {0}")]
    Invalid(&'static str),
}

/// Why a buffer could not be decoded. Terminal for the connection.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Malformed {
    #[error("unknown message type 0x{0:02X}")]
    UnknownType(u8),
    #[error("empty body")]
    EmptyBody,
    #[error("body length {0} exceeds the 16 MiB cap")]
    BodyTooLarge(usize),
    #[error("{0} overruns the message")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("{0} is not valid UTF-8")]
    InvalidUtf8(&'static str),
    #[error("invalid value {value} for {field}")]
    InvalidValue { field: &'static str, value: u64 },
    #[error("{field} count {count} exceeds {max}")]
    CountExceeded {
        field: &'static str,
        count: usize,
        max: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DecodeOutcome {
    /// One message and the number of bytes it occupied.
    Complete(WireMessage, usize),
    /// At least this many more bytes are required (never 0).
    NeedMore(usize),
    Malformed(Malformed),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, field: &'static str, s: &str) -> Result<(), EncodeError> {
        let len = u16::try_from(s.len()).map_err(|_| EncodeError::StringTooLong {
            field,
            len: s.len(),
        })?;
        self.u16(len);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }
    fn count(&mut self, field: &'static str, n: usize, max: usize) -> Result<(), EncodeError> {
        if n > max {
            return Err(EncodeError::TooMany {
                field,
                count: n,
                max,
            });
        }
        self.u16(n as u16);
        Ok(())
    }
}

/// Encodes one message body (type byte + payload).
pub fn encode_message(m: &WireMessage) -> Result<Vec<u8>, EncodeError> {
    let mut w = Writer {
        buf: Vec::with_capacity(32),
    };
    w.u8(m.message_type() as u8);
    match m {
        WireMessage::Hello {
            version,
            role,
            name,
        } => {
            w.u8(*version);
            w.u8(*role as u8);
            w.str("name", name)?;
        }
        WireMessage::HelloAck {
            session_id,
            server_version,
        } => {
            if *session_id == 0 {
                return Err(EncodeError::Invalid("session id 0"));
            }
            w.u32(*session_id);
            w.u8(*server_version);
        }
        WireMessage::ListProcessors | WireMessage::SessionListRequest => {}
        WireMessage::ProcessorList(entries) => {
            w.count("processor", entries.len(), u16::MAX as usize)?;
            for e in entries {
                w.str("processor id", &e.id)?;
                w.str("display name", &e.display_name)?;
                w.u8(e.remote as u8);
            }
        }
        WireMessage::SetProcessor {
            target,
            id,
            options,
        } => {
            w.u32(*target);
            w.str("processor id", id)?;
            w.str("options", options)?;
        }
        WireMessage::SetProcessorAck { target, id, status } => {
            w.u32(*target);
            w.str("processor id", id)?;
            w.u8(*status as u8);
        }
        WireMessage::Frame(f) => {
            let payload_len = u32::try_from(f.payload.len())
                .map_err(|_| EncodeError::BodyTooLarge(f.payload.len()))?;
            w.buf.reserve(f.payload.len() + 22);
            w.u32(f.seq);
            w.u64(f.capture_ts_us);
            w.u16(f.width);
            w.u16(f.height);
            w.u8(f.format);
            w.u8(0);
            w.u32(payload_len);
            w.buf.extend_from_slice(&f.payload);
        }
        WireMessage::Result(r) => {
            w.u32(r.frame_seq);
            w.str("processor id", &r.processor_id)?;
            w.u32(r.timing.recv_to_dispatch_us);
            w.u32(r.timing.process_us);
            w.count("annotation", r.annotations.len(), MAX_ANNOTATIONS)?;
            for a in &r.annotations {
                w.u8(a.kind().code());
                w.str("label", a.label())?;
                w.u16(a.confidence().raw());
                w.count("coordinate", a.coords().len(), u16::MAX as usize)?;
                for (x, y) in a.coords() {
                    w.u16(x.raw());
                    w.u16(y.raw());
                }
            }
            match &r.description {
                None => w.u8(0),
                Some(d) => {
                    check_description_text(&d.text)
                        .map_err(|_| EncodeError::Invalid("description text"))?;
                    w.u8(1);
                    w.u8(d.priority.code());
                    w.str("description", &d.text)?;
                }
            }
        }
        WireMessage::Error { code, message } => {
            w.u8(*code as u8);
            w.str("error message", message)?;
        }
        WireMessage::Ping(token) | WireMessage::Pong(token) => {
            w.buf.extend_from_slice(token);
        }
        WireMessage::StatsRequest { target } | WireMessage::Subscribe { target } => {
            w.u32(*target);
        }
        WireMessage::Stats(s) => {
            w.u32(s.session_id);
            w.u64(s.frames_received);
            w.u64(s.frames_processed);
            w.u64(s.frames_dropped);
            w.u64(s.descriptions_suppressed);
        }
        WireMessage::SessionList(entries) => {
            w.count("session", entries.len(), u16::MAX as usize)?;
            for e in entries {
                w.u32(e.session_id);
                w.str("session name", &e.name)?;
                w.str("processor id", &e.current_processor)?;
            }
        }
        WireMessage::SubscribeAck { target, status } => {
            if !status.valid_for_subscribe() {
                return Err(EncodeError::Invalid("subscribe status"));
            }
            w.u32(*target);
            w.u8(*status as u8);
        }
    }
    if w.buf.len() > MAX_BODY_LEN {
        return Err(EncodeError::BodyTooLarge(w.buf.len()));
    }
    Ok(w.buf)
}

/// Encodes a message with the 4-byte TCP length prefix.
pub fn encode_tcp(m: &WireMessage) -> Result<Vec<u8>, EncodeError> {
    let body = encode_message(m)?;
    Ok(frame_tcp(&body))
}

/// Prepends the TCP length prefix to an already-encoded body.
pub fn frame_tcp(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(LENGTH_PREFIX_LEN + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &'static str) -> Result<&'a [u8], Malformed> {
        if self.buf.len() - self.pos < n {
            return Err(Malformed::Truncated(field));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self, field: &'static str) -> Result<u8, Malformed> {
        Ok(self.take(1, field)?[0])
    }
    fn u16(&mut self, field: &'static str) -> Result<u16, Malformed> {
        let b = self.take(2, field)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, Malformed> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, Malformed> {
        let b = self.take(8, field)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
    fn str(&mut self, field: &'static str) -> Result<String, Malformed> {
        let len = self.u16(field)? as usize;
        let bytes = self.take(len, field)?;
        std::str::from_utf8(bytes)
            .map(str::to_owned)
            .map_err(|_| Malformed::InvalidUtf8(field))
    }
    fn token(&mut self) -> Result<[u8; 8], Malformed> {
        Ok(self.take(8, "ping token")?.try_into().unwrap())
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
}

fn invalid(field: &'static str, value: impl Into<u64>) -> Malformed {
    Malformed::InvalidValue {
        field,
        value: value.into(),
    }
}

/// Decodes exactly one body (the WebSocket form). Any bytes left over after
/// the message are an error.
pub fn decode_body(body: &[u8]) -> Result<WireMessage, Malformed> {
    if body.is_empty() {
        return Err(Malformed::EmptyBody);
    }
    if body.len() > MAX_BODY_LEN {
        return Err(Malformed::BodyTooLarge(body.len()));
    }
    let mut r = Reader { buf: body, pos: 1 };
    let ty = MessageType::from_code(body[0]).ok_or(Malformed::UnknownType(body[0]))?;
    let msg = match ty {
        MessageType::Hello => {
            let version = r.u8("version")?;
            let role = r.u8("role")?;
            let role = Role::from_code(role).ok_or_else(|| invalid("role", role))?;
            WireMessage::Hello {
                version,
                role,
                name: r.str("name")?,
            }
        }
        MessageType::HelloAck => {
            let session_id = r.u32("session id")?;
            if session_id == 0 {
                return Err(invalid("session id", 0u8));
            }
            WireMessage::HelloAck {
                session_id,
                server_version: r.u8("server version")?,
            }
        }
        MessageType::ListProcessors => WireMessage::ListProcessors,
        MessageType::ProcessorList => {
            let n = r.u16("processor count")? as usize;
            let mut entries = Vec::with_capacity(n.min(r.remaining() / 5));
            for _ in 0..n {
                let id = r.str("processor id")?;
                let display_name = r.str("display name")?;
                let flags = r.u8("flags")?;
                if flags > 1 {
                    return Err(invalid("processor flags", flags));
                }
                entries.push(ProcessorEntry {
                    id,
                    display_name,
                    remote: flags == 1,
                });
            }
            WireMessage::ProcessorList(entries)
        }
        MessageType::SetProcessor => WireMessage::SetProcessor {
            target: r.u32("target session")?,
            id: r.str("processor id")?,
            options: r.str("options")?,
        },
        MessageType::SetProcessorAck => {
            let target = r.u32("target session")?;
            let id = r.str("processor id")?;
            let status = r.u8("status")?;
            WireMessage::SetProcessorAck {
                target,
                id,
                status: AckStatus::from_code(status).ok_or_else(|| invalid("ack status", status))?,
            }
        }
        MessageType::Frame => {
            let seq = r.u32("seq")?;
            let capture_ts_us = r.u64("capture timestamp")?;
            let width = r.u16("width")?;
            let height = r.u16("height")?;
            let format = r.u8("format")?;
            let reserved = r.u8("reserved")?;
            if reserved != 0 {
                return Err(invalid("reserved", reserved));
            }
            let len = r.u32("payload length")? as usize;
            let payload = r.take(len, "frame payload")?.to_vec();
            WireMessage::Frame(FrameMsg {
                seq,
                capture_ts_us,
                width,
                height,
                format,
                payload,
            })
        }
        MessageType::Result => decode_result(&mut r)?,
        MessageType::Error => {
            let code = r.u8("error code")?;
            WireMessage::Error {
                code: ErrorCode::from_code(code).ok_or_else(|| invalid("error code", code))?,
                message: r.str("error message")?,
            }
        }
        MessageType::Ping => WireMessage::Ping(r.token()?),
        MessageType::Pong => WireMessage::Pong(r.token()?),
        MessageType::StatsRequest => WireMessage::StatsRequest {
            target: r.u32("target session")?,
        },
        MessageType::Stats => WireMessage::Stats(StatsMsg {
            session_id: r.u32("session id")?,
            frames_received: r.u64("frames received")?,
            frames_processed: r.u64("frames processed")?,
            frames_dropped: r.u64("frames dropped")?,
            descriptions_suppressed: r.u64("descriptions suppressed")?,
        }),
        MessageType::SessionListRequest => WireMessage::SessionListRequest,
        MessageType::SessionList => {
            let n = r.u16("session count")? as usize;
            let mut entries = Vec::with_capacity(n.min(r.remaining() / 8));
            for _ in 0..n {
                entries.push(SessionEntry {
                    session_id: r.u32("session id")?,
                    name: r.str("session name")?,
                    current_processor: r.str("processor id")?,
                });
            }
            WireMessage::SessionList(entries)
        }
        MessageType::Subscribe => WireMessage::Subscribe {
            target: r.u32("target session")?,
        },
        MessageType::SubscribeAck => {
            let target = r.u32("target session")?;
            let status = r.u8("status")?;
            let status = AckStatus::from_code(status)
                .filter(|s| s.valid_for_subscribe())
                .ok_or_else(|| invalid("subscribe status", status))?;
            WireMessage::SubscribeAck { target, status }
        }
    };
    if r.remaining() != 0 {
        return Err(Malformed::TrailingBytes(r.remaining()));
    }
    Ok(msg)
}

fn decode_result(r: &mut Reader<'_>) -> Result<WireMessage, Malformed> {
    let frame_seq = r.u32("frame seq")?;
    let processor_id = r.str("processor id")?;
    let timing = TimingBreakdown {
        recv_to_dispatch_us: r.u32("recv_to_dispatch_us")?,
        process_us: r.u32("process_us")?,
    };
    let count = r.u16("annotation count")? as usize;
    if count > MAX_ANNOTATIONS {
        return Err(Malformed::CountExceeded {
            field: "annotation",
            count,
            max: MAX_ANNOTATIONS,
        });
    }
    let mut annotations = Vec::with_capacity(count);
    for _ in 0..count {
        let kind = r.u8("annotation kind")?;
        let kind = AnnotationKind::from_code(kind).ok_or_else(|| invalid("annotation kind", kind))?;
        let label = r.str("label")?;
        let conf = r.u16("confidence")?;
        let confidence = Confidence::from_raw(conf).ok_or_else(|| invalid("confidence", conf))?;
        let n = r.u16("coordinate count")? as usize;
        let mut coords = Vec::with_capacity(n.min(r.remaining() / 4));
        for _ in 0..n {
            let x = NormCoord::from_raw(r.u16("coordinate")?);
            let y = NormCoord::from_raw(r.u16("coordinate")?);
            coords.push((x, y));
        }
        let a = Annotation::from_parts(kind, label, confidence, coords)
            .map_err(|_| invalid("annotation coordinates", n as u64))?;
        annotations.push(a);
    }
    let has = r.u8("has_description")?;
    let description = match has {
        0 => None,
        1 => {
            let p = r.u8("priority")?;
            let priority = Priority::from_code(p).ok_or_else(|| invalid("priority", p))?;
            let text = r.str("description")?;
            check_description_text(&text).map_err(|_| invalid("description length", text.len() as u64))?;
            Some(WireDescription { priority, text })
        }
        other => return Err(invalid("has_description", other)),
    };
    Ok(WireMessage::Result(ResultMsg {
        frame_seq,
        processor_id,
        timing,
        annotations,
        description,
    }))
}

/// Decodes one length-prefixed message from the front of `buf` (the TCP
/// form). Bytes after the message are left untouched.
pub fn decode_message(buf: &[u8]) -> DecodeOutcome {
    if buf.len() < LENGTH_PREFIX_LEN {
        return DecodeOutcome::NeedMore(LENGTH_PREFIX_LEN - buf.len());
    }
    let len = u32::from_le_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_BODY_LEN {
        return DecodeOutcome::Malformed(Malformed::BodyTooLarge(len));
    }
    if len == 0 {
        return DecodeOutcome::Malformed(Malformed::EmptyBody);
    }
    let total = LENGTH_PREFIX_LEN + len;
    if buf.len() < total {
        return DecodeOutcome::NeedMore(total - buf.len());
    }
    match decode_body(&buf[LENGTH_PREFIX_LEN..total]) {
        Ok(m) => DecodeOutcome::Complete(m, total),
        Err(e) => DecodeOutcome::Malformed(e),
    }
}

/// Accumulates bytes from a stream transport and yields whole messages.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn extend(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Next complete message, `Ok(None)` when more bytes are needed.
    pub fn next_message(&mut self) -> Result<Option<WireMessage>, Malformed> {
        match decode_message(&self.buf) {
            DecodeOutcome::Complete(m, used) => {
                self.buf.drain(..used);
                Ok(Some(m))
            }
            DecodeOutcome::NeedMore(_) => Ok(None),
            DecodeOutcome::Malformed(e) => Err(e),
        }
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ping_layout() {
        let m = WireMessage::Ping([1, 2, 3, 4, 5, 6, 7, 8]);
        let body = encode_message(&m).unwrap();
        assert_eq!(body, [0x0A, 1, 2, 3, 4, 5, 6, 7, 8]);
        let tcp = encode_tcp(&m).unwrap();
        assert_eq!(&tcp[..4], &[0x09, 0, 0, 0]);
        assert_eq!(&tcp[4..], &body[..]);
    }

    #[test]
    fn hello_layout() {
        let m = WireMessage::Hello {
            version: 1,
            role: Role::Source,
            name: String::new(),
        };
        assert_eq!(encode_message(&m).unwrap(), [0x01, 0x01, 0x00, 0x00, 0x00]);
    }

    #[test]
    fn set_processor_round_trip() {
        let m = WireMessage::SetProcessor {
            target: 0,
            id: "find_item".into(),
            options: "term=KEYS".into(),
        };
        let tcp = encode_tcp(&m).unwrap();
        assert_eq!(decode_message(&tcp), DecodeOutcome::Complete(m, tcp.len()));
    }

    #[test]
    fn short_buffer_needs_more() {
        match decode_message(&[0x09, 0x00, 0x00]) {
            DecodeOutcome::NeedMore(n) => assert!(n >= 1),
            other => panic!("{other:?}"),
        }
        assert_eq!(decode_message(&[]), DecodeOutcome::NeedMore(4));
        assert_eq!(decode_message(&[2, 0, 0, 0, 0x0A]), DecodeOutcome::NeedMore(1));
    }

    #[test]
    fn unknown_type_is_malformed() {
        assert_eq!(decode_body(&[0xFF, 1, 2]), Err(Malformed::UnknownType(0xFF)));
        assert_eq!(
            decode_message(&[1, 0, 0, 0, 0xFF]),
            DecodeOutcome::Malformed(Malformed::UnknownType(0xFF))
        );
        assert_eq!(decode_body(&[0x00]), Err(Malformed::UnknownType(0)));
    }

    #[test]
    fn oversized_and_empty_bodies() {
        let len = (MAX_BODY_LEN as u32 + 1).to_le_bytes();
        assert!(matches!(
            decode_message(&len),
            DecodeOutcome::Malformed(Malformed::BodyTooLarge(_))
        ));
        assert_eq!(
            decode_message(&[0, 0, 0, 0]),
            DecodeOutcome::Malformed(Malformed::EmptyBody)
        );
    }

    #[test]
    fn string_overrun_and_trailing_bytes() {
        // HELLO whose name claims 10 bytes but carries 2
        assert!(matches!(
            decode_body(&[0x01, 1, 0, 10, 0, b'a', b'b']),
            Err(Malformed::Truncated(_))
        ));
        assert_eq!(
            decode_body(&[0x03, 0]),
            Err(Malformed::TrailingBytes(1))
        );
    }

    #[test]
    fn annotation_count_cap() {
        let mut body = vec![0x08];
        body.extend_from_slice(&1u32.to_le_bytes());
        body.extend_from_slice(&[1, 0, b'x']);
        body.extend_from_slice(&[0; 8]);
        body.extend_from_slice(&257u16.to_le_bytes());
        assert!(matches!(
            decode_body(&body),
            Err(Malformed::CountExceeded { max: 256, .. })
        ));
    }

    #[test]
    fn noncanonical_fields_rejected() {
        let frame = WireMessage::Frame(FrameMsg {
            seq: 1,
            capture_ts_us: 2,
            width: 1,
            height: 1,
            format: 0,
            payload: vec![9],
        });
        let mut body = encode_message(&frame).unwrap();
        body[18] = 1; // reserved byte
        assert!(matches!(decode_body(&body), Err(Malformed::InvalidValue { .. })));
    }

    #[test]
    fn encode_rejects_oversize_fields() {
        let m = WireMessage::Hello {
            version: 1,
            role: Role::Console,
            name: "x".repeat(70_000),
        };
        assert!(matches!(encode_message(&m), Err(EncodeError::StringTooLong { .. })));
        let ann = Annotation::point("p", 1.0, (0.5, 0.5)).unwrap();
        let m = WireMessage::Result(ResultMsg {
            frame_seq: 1,
            processor_id: "x".into(),
            timing: TimingBreakdown::default(),
            annotations: vec![ann; 257],
            description: None,
        });
        assert!(matches!(encode_message(&m), Err(EncodeError::TooMany { .. })));
        let m = WireMessage::Frame(FrameMsg {
            seq: 1,
            capture_ts_us: 0,
            width: 4096,
            height: 4096,
            format: 1,
            payload: vec![0; 4096 * 4096 + 1],
        });
        assert!(matches!(encode_message(&m), Err(EncodeError::BodyTooLarge(_))));
    }

    #[test]
    fn stream_decoder_splits_messages() {
        let a = encode_tcp(&WireMessage::Ping([7; 8])).unwrap();
        let b = encode_tcp(&WireMessage::ListProcessors).unwrap();
        let mut all = a.clone();
        all.extend_from_slice(&b);
        let mut dec = StreamDecoder::new();
        for chunk in all.chunks(3) {
            dec.extend(chunk);
        }
        assert_eq!(dec.next_message().unwrap(), Some(WireMessage::Ping([7; 8])));
        assert_eq!(dec.next_message().unwrap(), Some(WireMessage::ListProcessors));
        assert_eq!(dec.next_message().unwrap(), None);
        assert_eq!(dec.buffered(), 0);
    }

    fn text(max: usize) -> impl Strategy<Value = String> {
        proptest::collection::vec(any::<char>(), 0..max).prop_map(|v| v.into_iter().collect())
    }

    fn annotation() -> impl Strategy<Value = Annotation> {
        (0u8..4, text(8), 0u16..=10000, proptest::collection::vec((any::<u16>(), any::<u16>()), 2..6))
            .prop_map(|(kind, label, conf, mut coords)| {
                let kind = AnnotationKind::from_code(kind).unwrap();
                match kind {
                    AnnotationKind::Box => {
                        coords.truncate(2);
                        let (a, b) = (coords[0], coords[1]);
                        coords = vec![(a.0.min(b.0), a.1.min(b.1)), (a.0.max(b.0), a.1.max(b.1))];
                    }
                    AnnotationKind::Point | AnnotationKind::Label => coords.truncate(1),
                    AnnotationKind::Polyline => {}
                }
                let coords = coords
                    .into_iter()
                    .map(|(x, y)| (NormCoord::from_raw(x), NormCoord::from_raw(y)))
                    .collect();
                Annotation::from_parts(kind, label, Confidence::from_raw(conf).unwrap(), coords).unwrap()
            })
    }

    fn message() -> impl Strategy<Value = WireMessage> {
        prop_oneof![
            (any::<u8>(), any::<bool>(), text(12)).prop_map(|(version, console, name)| WireMessage::Hello {
                version,
                role: if console { Role::Console } else { Role::Source },
                name
            }),
            (1u32.., any::<u8>()).prop_map(|(session_id, server_version)| WireMessage::HelloAck {
                session_id,
                server_version
            }),
            Just(WireMessage::ListProcessors),
            proptest::collection::vec((text(8), text(8), any::<bool>()), 0..4).prop_map(|v| {
                WireMessage::ProcessorList(
                    v.into_iter()
                        .map(|(id, display_name, remote)| ProcessorEntry { id, display_name, remote })
                        .collect(),
                )
            }),
            (any::<u32>(), text(8), text(16)).prop_map(|(target, id, options)| WireMessage::SetProcessor {
                target,
                id,
                options
            }),
            (any::<u32>(), text(8), 0u8..5).prop_map(|(target, id, s)| WireMessage::SetProcessorAck {
                target,
                id,
                status: AckStatus::from_code(s).unwrap()
            }),
            (any::<u32>(), any::<u64>(), any::<u16>(), any::<u16>(), any::<u8>(), proptest::collection::vec(any::<u8>(), 0..64))
                .prop_map(|(seq, capture_ts_us, width, height, format, payload)| {
                    WireMessage::Frame(FrameMsg { seq, capture_ts_us, width, height, format, payload })
                }),
            (any::<u32>(), text(8), any::<u32>(), any::<u32>(), proptest::collection::vec(annotation(), 0..4),
             proptest::option::of((any::<bool>(), text(20).prop_filter("non-empty", |s| !s.is_empty()))))
                .prop_map(|(frame_seq, processor_id, a, b, annotations, d)| {
                    WireMessage::Result(ResultMsg {
                        frame_seq,
                        processor_id,
                        timing: TimingBreakdown { recv_to_dispatch_us: a, process_us: b },
                        annotations,
                        description: d.map(|(i, text)| WireDescription {
                            priority: if i { Priority::Interrupt } else { Priority::Routine },
                            text,
                        }),
                    })
                }),
            (1u8..7, text(16)).prop_map(|(c, message)| WireMessage::Error {
                code: ErrorCode::from_code(c).unwrap(),
                message
            }),
            any::<[u8; 8]>().prop_map(WireMessage::Ping),
            any::<[u8; 8]>().prop_map(WireMessage::Pong),
            any::<u32>().prop_map(|target| WireMessage::StatsRequest { target }),
            any::<(u32, u64, u64, u64, u64)>().prop_map(|(a, b, c, d, e)| WireMessage::Stats(StatsMsg {
                session_id: a,
                frames_received: b,
                frames_processed: c,
                frames_dropped: d,
                descriptions_suppressed: e
            })),
            Just(WireMessage::SessionListRequest),
            proptest::collection::vec((any::<u32>(), text(8), text(8)), 0..4).prop_map(|v| {
                WireMessage::SessionList(
                    v.into_iter()
                        .map(|(session_id, name, current_processor)| SessionEntry { session_id, name, current_processor })
                        .collect(),
                )
            }),
            any::<u32>().prop_map(|target| WireMessage::Subscribe { target }),
            (any::<u32>(), any::<bool>()).prop_map(|(target, ok)| WireMessage::SubscribeAck {
                target,
                status: if ok { AckStatus::Ok } else { AckStatus::NoSuchSession }
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn round_trip_is_canonical(m in message()) {
            let tcp = encode_tcp(&m).unwrap();
            match decode_message(&tcp) {
                DecodeOutcome::Complete(back, used) => {
                    prop_assert_eq!(used, tcp.len());
                    prop_assert_eq!(encode_tcp(&back).unwrap(), tcp.clone());
                    prop_assert_eq!(back, m);
                }
                other => prop_assert!(false, "{:?}", other),
            }
        }

        #[test]
        fn strict_prefixes_need_more(m in message()) {
            let tcp = encode_tcp(&m).unwrap();
            for k in 0..tcp.len() {
                prop_assert!(matches!(decode_message(&tcp[..k]), DecodeOutcome::NeedMore(n) if n >= 1));
            }
        }

        #[test]
        fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            let _ = decode_message(&bytes);
            let _ = decode_body(&bytes);
        }
    }
}
