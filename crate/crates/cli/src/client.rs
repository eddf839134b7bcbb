//! The streaming client: paces frames from a source to the server and
//! prints a transcript of the descriptions that come back.

use std::fmt;
use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant, SystemTime};

use framerelay_core::source::{FrameSource, SourceSpec};
use framerelay_core::wire::{AckStatus, FrameMsg, Malformed, ResultMsg, Role, StatsMsg, PROTOCOL_VERSION};
use framerelay_core::{encode_tcp, Priority, StreamDecoder, WireMessage};
use thiserror::Error;

use crate::tts::TtsHook;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(5);
pub const REPLY_TIMEOUT: Duration = Duration::from_secs(5);
pub const TRAILING_WAIT: Duration = Duration::from_secs(2);
/// How long speech may keep going once the session is over.
pub const SPEECH_GRACE: Duration = Duration::from_secs(3);

#[derive(Debug, Error)]
pub enum RecvError {
    #[error("connection closed by peer")]
    Closed,
    #[error("timed out waiting for the server")]
    Timeout,
    #[error("malformed message from server: {0}")]
    Malformed(#[from] Malformed),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Receiving half of a TCP relay connection.
pub struct MessageReader {
    stream: TcpStream,
    decoder: StreamDecoder,
    buf: Vec<u8>,
}

impl MessageReader {
    /// Blocks until a whole message arrives.
    pub fn recv(&mut self) -> Result<WireMessage, RecvError> {
        self.recv_deadline(None)
    }

    pub fn recv_timeout(&mut self, timeout: Duration) -> Result<WireMessage, RecvError> {
        self.recv_deadline(Some(Instant::now() + timeout))
    }

    fn recv_deadline(&mut self, deadline: Option<Instant>) -> Result<WireMessage, RecvError> {
        loop {
            if let Some(m) = self.decoder.next_message()? {
                return Ok(m);
            }
            let wait = match deadline {
                Some(d) => {
                    let left = d.saturating_duration_since(Instant::now());
                    if left.is_zero() {
                        return Err(RecvError::Timeout);
                    }
                    Some(left)
                }
                None => None,
            };
            self.stream.set_read_timeout(wait)?;
            match self.stream.read(&mut self.buf) {
                Ok(0) => return Err(RecvError::Closed),
                Ok(n) => self.decoder.extend(&self.buf[..n]),
                Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {}
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Sending half; clones share the socket and serialize their writes.
#[derive(Clone)]
pub struct MessageWriter {
    stream: Arc<Mutex<TcpStream>>,
}

impl MessageWriter {
    pub fn send(&self, msg: &WireMessage) -> io::Result<()> {
        let bytes = encode_tcp(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.send_raw(&bytes)
    }

    /// Writes bytes verbatim, for exercising the server with broken input.
    pub fn send_raw(&self, bytes: &[u8]) -> io::Result<()> {
        let mut s = self.stream.lock().unwrap_or_else(|e| e.into_inner());
        s.write_all(bytes)
    }

    pub fn shutdown(&self) {
        let s = self.stream.lock().unwrap_or_else(|e| e.into_inner());
        let _ = s.shutdown(Shutdown::Both);
    }
}

pub fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("{addr} did not resolve")))
}

/// Opens a TCP relay connection (no handshake).
pub fn connect(addr: &str) -> io::Result<(MessageReader, MessageWriter)> {
    let stream = TcpStream::connect_timeout(&resolve(addr)?, CONNECT_TIMEOUT)?;
    stream.set_nodelay(true)?;
    let reader = MessageReader {
        stream: stream.try_clone()?,
        decoder: StreamDecoder::new(),
        buf: vec![0; 64 * 1024],
    };
    let writer = MessageWriter {
        stream: Arc::new(Mutex::new(stream)),
    };
    Ok((reader, writer))
}

#[derive(Debug, Error)]
pub enum HandshakeError {
    #[error(transparent)]
    Recv(#[from] RecvError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("server refused the session: {0}")]
    Refused(String),
    #[error("unexpected {0} during handshake")]
    Unexpected(String),
}

/// Sends HELLO and waits for HELLO_ACK; returns the session id.
pub fn handshake(
    reader: &mut MessageReader,
    writer: &MessageWriter,
    role: Role,
    name: &str,
) -> Result<u32, HandshakeError> {
    writer.send(&WireMessage::Hello {
        version: PROTOCOL_VERSION,
        role,
        name: name.to_owned(),
    })?;
    match reader.recv_timeout(REPLY_TIMEOUT)? {
        WireMessage::HelloAck { session_id, .. } => Ok(session_id),
        WireMessage::Error { code, message } => Err(HandshakeError::Refused(format!("{code:?}: {message}"))),
        other => Err(HandshakeError::Unexpected(format!("{:?}", other.message_type()))),
    }
}

/// One spoken description as received.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptLine {
    pub frame_seq: u32,
    pub processor: String,
    pub priority: Priority,
    pub text: String,
    pub received_at: SystemTime,
}

impl TranscriptLine {
    pub fn from_result(result: &ResultMsg) -> Option<Self> {
        let desc = result.description.as_ref()?;
        Some(TranscriptLine {
            frame_seq: result.frame_seq,
            processor: result.processor_id.clone(),
            priority: desc.priority,
            text: desc.text.clone(),
            received_at: SystemTime::now(),
        })
    }
}

impl fmt::Display for TranscriptLine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[seq={}][proc={}][p={}] {}",
            self.frame_seq,
            self.processor,
            self.priority.as_str(),
            self.text
        )
    }
}

/// Parses a transcript line back into (seq, processor, priority, text).
pub fn parse_transcript_line(line: &str) -> Option<(u32, String, Priority, String)> {
    let rest = line.strip_prefix("[seq=")?;
    let (seq, rest) = rest.split_once("][proc=")?;
    let (proc_id, rest) = rest.split_once("][p=")?;
    let (prio, text) = rest.split_once("] ")?;
    let priority = match prio {
        "routine" => Priority::Routine,
        "interrupt" => Priority::Interrupt,
        _ => return None,
    };
    Some((seq.parse().ok()?, proc_id.to_owned(), priority, text.to_owned()))
}

pub fn stats_line(s: &StatsMsg) -> String {
    format!(
        "stats session={} received={} processed={} dropped={} suppressed={}",
        s.session_id, s.frames_received, s.frames_processed, s.frames_dropped, s.descriptions_suppressed
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Ok,
    BadArguments,
    ConnectFailure,
    ProtocolError,
    Dropped,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        match self {
            ExitStatus::Ok => 0,
            ExitStatus::BadArguments => 2,
            ExitStatus::ConnectFailure => 3,
            ExitStatus::ProtocolError => 4,
            ExitStatus::Dropped => 5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub server: String,
    pub source: SourceSpec,
    pub fps: f64,
    pub processor: Option<String>,
    pub options: String,
    pub looping: bool,
    /// Stop after this many frames even when looping.
    pub max_frames: Option<u64>,
    pub tts_cmd: Option<String>,
    pub name: String,
    pub stats_interval: Option<Duration>,
    pub trailing_wait: Duration,
}

impl ClientConfig {
    pub fn new(server: impl Into<String>, source: SourceSpec) -> Self {
        ClientConfig {
            server: server.into(),
            source,
            fps: 5.0,
            processor: None,
            options: String::new(),
            looping: false,
            max_frames: None,
            tts_cmd: None,
            name: "relay-client".to_owned(),
            stats_interval: None,
            trailing_wait: TRAILING_WAIT,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionReport {
    pub exit: ExitStatus,
    pub session_id: Option<u32>,
    /// Status of the SET_PROCESSOR sent for `--processor`.
    pub processor_ack: Option<AckStatus>,
    pub frames_sent: u64,
    pub last_sent_seq: Option<u32>,
    pub last_result_seq: Option<u32>,
    pub results: u64,
    pub final_stats: Option<StatsMsg>,
    pub transcript: Vec<TranscriptLine>,
    /// Wall time spent sending frames, first to last.
    pub send_duration: Duration,
}

impl SessionReport {
    fn new(exit: ExitStatus) -> Self {
        SessionReport {
            exit,
            session_id: None,
            processor_ack: None,
            frames_sent: 0,
            last_sent_seq: None,
            last_result_seq: None,
            results: 0,
            final_stats: None,
            transcript: Vec::new(),
            send_duration: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ended {
    Protocol,
    Dropped,
    /// We closed the connection ourselves.
    Clean,
}

#[derive(Default)]
struct ReceiverState {
    last_result_seq: Option<u32>,
    results: u64,
    stats: Option<StatsMsg>,
    stats_seen: u64,
    ended: Option<Ended>,
}

struct Shared {
    state: Mutex<ReceiverState>,
    changed: Condvar,
    closing: AtomicBool,
}

impl Shared {
    fn update(&self, f: impl FnOnce(&mut ReceiverState)) {
        f(&mut self.state.lock().unwrap_or_else(|e| e.into_inner()));
        self.changed.notify_all();
    }

    /// Waits until `done` holds, the receiver has ended, or the deadline.
    fn wait_until(&self, deadline: Instant, done: impl Fn(&ReceiverState) -> bool) -> bool {
        let mut st = self.state.lock().unwrap_or_else(|e| e.into_inner());
        loop {
            if done(&st) {
                return true;
            }
            let now = Instant::now();
            if st.ended.is_some() || now >= deadline {
                return false;
            }
            st = self
                .changed
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}

fn receive_loop(
    mut reader: MessageReader,
    shared: Arc<Shared>,
    mut transcript_out: Box<dyn Write + Send>,
    mut tts: Option<TtsHook>,
) -> Vec<TranscriptLine> {
    let mut transcript = Vec::new();
    let ended = loop {
        let msg = match reader.recv() {
            Ok(m) => m,
            Err(RecvError::Malformed(e)) => {
                eprintln!("relay-client: protocol error: {e}");
                break Ended::Protocol;
            }
            Err(_) if shared.closing.load(Ordering::SeqCst) => break Ended::Clean,
            Err(e) => {
                eprintln!("relay-client: connection lost: {e}");
                break Ended::Dropped;
            }
        };
        match msg {
            WireMessage::Result(result) => {
                if let Some(line) = TranscriptLine::from_result(&result) {
                    let _ = writeln!(transcript_out, "{line}");
                    let _ = transcript_out.flush();
                    if let Some(hook) = &mut tts {
                        hook.speak(&line.text, line.priority);
                    }
                    transcript.push(line);
                }
                shared.update(|st| {
                    st.last_result_seq = Some(result.frame_seq);
                    st.results += 1;
                });
            }
            WireMessage::Stats(s) => {
                eprintln!("{}", stats_line(&s));
                shared.update(|st| {
                    st.stats = Some(s);
                    st.stats_seen += 1;
                });
            }
            WireMessage::Error { code, message } => eprintln!("relay-client: server error {code:?}: {message}"),
            WireMessage::SetProcessorAck { id, status, .. } => {
                eprintln!("relay-client: processor {id}: {status}");
            }
            WireMessage::Pong(_) | WireMessage::ProcessorList(_) | WireMessage::SessionList(_) => {}
            other => {
                eprintln!("relay-client: unexpected {:?} from server", other.message_type());
                break Ended::Protocol;
            }
        }
    };
    shared.update(|st| st.ended = Some(ended));
    if let Some(hook) = tts {
        hook.finish_within(SPEECH_GRACE);
    }
    transcript
}

/// Streams the configured source through the server. The transcript is
/// written to `transcript_out` as results arrive.
pub fn run_session(config: &ClientConfig, transcript_out: Box<dyn Write + Send>) -> SessionReport {
    if !(config.fps.is_finite() && config.fps > 0.0) {
        eprintln!("relay-client: fps must be a positive number");
        return SessionReport::new(ExitStatus::BadArguments);
    }
    let mut source = match FrameSource::open(&config.source, config.looping) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("relay-client: {e}");
            return SessionReport::new(ExitStatus::BadArguments);
        }
    };
    let (mut reader, writer) = match connect(&config.server) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("relay-client: cannot connect to {}: {e}", config.server);
            return SessionReport::new(ExitStatus::ConnectFailure);
        }
    };
    let mut report = SessionReport::new(ExitStatus::Ok);
    let handshake_failed = |e: &dyn fmt::Display| {
        eprintln!("relay-client: {e}");
        writer.shutdown();
    };
    match handshake(&mut reader, &writer, Role::Source, &config.name) {
        Ok(id) => report.session_id = Some(id),
        Err(HandshakeError::Recv(RecvError::Closed | RecvError::Io(_))) | Err(HandshakeError::Io(_)) => {
            handshake_failed(&"connection dropped during handshake");
            report.exit = ExitStatus::Dropped;
            return report;
        }
        Err(e) => {
            handshake_failed(&e);
            report.exit = ExitStatus::ProtocolError;
            return report;
        }
    }

    if let Some(id) = &config.processor {
        let sent = writer.send(&WireMessage::SetProcessor {
            target: 0,
            id: id.clone(),
            options: config.options.clone(),
        });
        let ack = sent.map_err(RecvError::from).and_then(|_| loop {
            match reader.recv_timeout(REPLY_TIMEOUT)? {
                WireMessage::SetProcessorAck { status, .. } => break Ok(status),
                WireMessage::Error { code, message } => eprintln!("relay-client: server error {code:?}: {message}"),
                _ => {}
            }
        });
        match ack {
            Ok(AckStatus::Ok) => eprintln!("relay-client: using processor {id}"),
            Ok(status) => eprintln!("relay-client: processor {id} rejected ({status}); continuing with the current processor"),
            Err(e) => {
                eprintln!("relay-client: no reply to processor selection: {e}");
                writer.shutdown();
                report.exit = match e {
                    RecvError::Malformed(_) | RecvError::Timeout => ExitStatus::ProtocolError,
                    _ => ExitStatus::Dropped,
                };
                return report;
            }
        }
        report.processor_ack = ack.ok();
    }

    let shared = Arc::new(Shared {
        state: Mutex::new(ReceiverState::default()),
        changed: Condvar::new(),
        closing: AtomicBool::new(false),
    });
    let tts = config.tts_cmd.clone().map(TtsHook::spawn);
    let receiver = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("relay-receiver".into())
            .spawn(move || receive_loop(reader, shared, transcript_out, tts))
            .expect("spawn receiver thread")
    };
    let (stop_ticker, ticker) = match config.stats_interval {
        Some(every) => {
            let (tx, rx) = mpsc::channel::<()>();
            let w = writer.clone();
            let t = thread::spawn(move || {
                while let Err(mpsc::RecvTimeoutError::Timeout) = rx.recv_timeout(every) {
                    if w.send(&WireMessage::StatsRequest { target: 0 }).is_err() {
                        break;
                    }
                }
            });
            (Some(tx), Some(t))
        }
        None => (None, None),
    };

    let period = Duration::from_secs_f64(1.0 / config.fps);
    let started = Instant::now();
    let mut write_failed = false;
    let mut first_send: Option<Instant> = None;
    let mut last_send = started;
    for (k, item) in source.by_ref().enumerate() {
        if config.max_frames.is_some_and(|m| k as u64 >= m) {
            break;
        }
        let frame = match item {
            Ok(f) => f,
            Err(e) => {
                eprintln!("relay-client: {e}");
                break;
            }
        };
        if shared.state.lock().unwrap_or_else(|e| e.into_inner()).ended.is_some() {
            break;
        }
        let due = started + period.mul_f64(k as f64);
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        if let Err(e) = writer.send(&WireMessage::Frame(FrameMsg::from_frame(&frame))) {
            eprintln!("relay-client: send failed: {e}");
            write_failed = true;
            break;
        }
        last_send = Instant::now();
        first_send.get_or_insert(last_send);
        report.frames_sent += 1;
        report.last_sent_seq = Some(frame.seq());
    }
    report.send_duration = first_send.map_or(Duration::ZERO, |f| last_send - f);

    if !write_failed {
        if let Some(last) = report.last_sent_seq {
            shared.wait_until(Instant::now() + config.trailing_wait, |st| st.last_result_seq == Some(last));
        }
        let seen = shared.state.lock().unwrap_or_else(|e| e.into_inner()).stats_seen;
        if writer.send(&WireMessage::StatsRequest { target: 0 }).is_ok() {
            shared.wait_until(Instant::now() + REPLY_TIMEOUT, |st| st.stats_seen > seen);
        }
    }
    drop(stop_ticker);
    if let Some(t) = ticker {
        let _ = t.join();
    }
    shared.closing.store(true, Ordering::SeqCst);
    writer.shutdown();
    report.transcript = receiver.join().unwrap_or_default();

    let st = shared.state.lock().unwrap_or_else(|e| e.into_inner());
    report.last_result_seq = st.last_result_seq;
    report.results = st.results;
    report.final_stats = st.stats;
    report.exit = match (st.ended, write_failed) {
        (Some(Ended::Protocol), _) => ExitStatus::ProtocolError,
        (Some(Ended::Dropped), _) | (_, true) => ExitStatus::Dropped,
        _ => ExitStatus::Ok,
    };
    report
}
