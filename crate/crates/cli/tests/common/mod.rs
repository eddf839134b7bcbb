#![allow(dead_code)]

use std::sync::atomic::AtomicU64;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use framerelay_cli::client::{connect, handshake, MessageReader, MessageWriter, RecvError};
use framerelay_cli::server::{Clock, ServerConfig, ServerHandle};
use framerelay_core::framework::{OptionsError, ProcessOutput, Processor, ProcessorDescriptor, ProcessorError};
use framerelay_core::wire::{FrameMsg, ResultMsg, Role, StatsMsg};
use framerelay_core::{
    register_builtins, Frame, LumaImage, Priority, ProcessorId, ProcessorOptions, Registry, Utterance, VlmConfig,
    WireMessage,
};

pub const RECV: Duration = Duration::from_secs(10);

/// Sleeps `ms` (default 50) per frame and says nothing.
pub struct Sleepy(Duration);

impl Processor for Sleepy {
    fn process(&mut self, _: &Frame) -> Result<ProcessOutput, ProcessorError> {
        thread::sleep(self.0);
        Ok(ProcessOutput::empty())
    }
}

/// Says `text` (default "same") with `priority` on every frame.
pub struct Say {
    text: String,
    priority: Priority,
}

impl Processor for Say {
    fn process(&mut self, _: &Frame) -> Result<ProcessOutput, ProcessorError> {
        Ok(ProcessOutput {
            annotations: vec![],
            utterance: Some(Utterance {
                text: self.text.clone(),
                priority: self.priority,
            }),
        })
    }
}

/// Fails on every frame; `mode=panic` panics instead of returning an error.
pub struct Fail {
    panic: bool,
}

impl Processor for Fail {
    fn process(&mut self, _: &Frame) -> Result<ProcessOutput, ProcessorError> {
        if self.panic {
            panic!("deliberate test panic");
        }
        Err(ProcessorError("deliberate test failure".into()))
    }
}

/// Counts the frames it has seen: "count N".
#[derive(Default)]
pub struct Counter(u64);

impl Processor for Counter {
    fn process(&mut self, _: &Frame) -> Result<ProcessOutput, ProcessorError> {
        self.0 += 1;
        Ok(ProcessOutput {
            annotations: vec![],
            utterance: Some(Utterance::interrupt(format!("count {}", self.0))),
        })
    }
}

fn desc(id: &str, keys: &'static [&'static str]) -> ProcessorDescriptor {
    ProcessorDescriptor {
        id: ProcessorId::new(id).unwrap(),
        display_name: format!("test {id}"),
        remote: false,
        option_keys: keys,
    }
}

/// The five built-ins followed by the test processors.
pub fn registry(vlm: VlmConfig) -> Arc<Registry> {
    let mut r = Registry::new();
    register_builtins(&mut r, vlm, Arc::new(AtomicU64::new(0))).unwrap();
    r.register(desc("sleepy", &["ms"]), |o| {
        let ms: u64 = o.parse_or("ms", 50)?;
        Ok(Box::new(Sleepy(Duration::from_millis(ms))) as Box<dyn Processor>)
    })
    .unwrap();
    r.register(desc("say", &["text", "priority"]), |o: &ProcessorOptions| {
        let priority = match o.get("priority").unwrap_or("routine") {
            "routine" => Priority::Routine,
            "interrupt" => Priority::Interrupt,
            _ => return Err(OptionsError::invalid("priority", "routine or interrupt")),
        };
        Ok(Box::new(Say {
            text: o.get("text").unwrap_or("same").to_owned(),
            priority,
        }) as Box<dyn Processor>)
    })
    .unwrap();
    r.register(desc("fail", &["mode"]), |o| {
        Ok(Box::new(Fail {
            panic: o.get("mode") == Some("panic"),
        }) as Box<dyn Processor>)
    })
    .unwrap();
    r.register(desc("counter", &[]), |_| Ok(Box::new(Counter::default()) as Box<dyn Processor>))
        .unwrap();
    r.seal();
    Arc::new(r)
}

pub fn start_server() -> ServerHandle {
    ServerHandle::start(ServerConfig::ephemeral(), registry(VlmConfig::default())).unwrap()
}

pub fn start_server_with(config: ServerConfig, vlm: VlmConfig, clock: Option<Clock>) -> ServerHandle {
    match clock {
        Some(c) => ServerHandle::start_with_clock(config, registry(vlm), c).unwrap(),
        None => ServerHandle::start(config, registry(vlm)).unwrap(),
    }
}

pub struct Peer {
    pub reader: MessageReader,
    pub writer: MessageWriter,
    pub session_id: u32,
}

impl Peer {
    pub fn open(server: &ServerHandle, role: Role, name: &str) -> Peer {
        let (mut reader, writer) = connect(&server.tcp_addr().to_string()).unwrap();
        let session_id = handshake(&mut reader, &writer, role, name).unwrap();
        Peer {
            reader,
            writer,
            session_id,
        }
    }

    pub fn send(&self, msg: &WireMessage) {
        self.writer.send(msg).unwrap();
    }

    pub fn recv(&mut self) -> WireMessage {
        self.reader.recv_timeout(RECV).unwrap()
    }

    pub fn try_recv(&mut self, timeout: Duration) -> Result<WireMessage, RecvError> {
        self.reader.recv_timeout(timeout)
    }

    /// Next message of interest, skipping the ones `skip` accepts.
    pub fn recv_where(&mut self, mut want: impl FnMut(&WireMessage) -> bool) -> WireMessage {
        loop {
            let m = self.recv();
            if want(&m) {
                return m;
            }
        }
    }

    pub fn recv_result(&mut self) -> ResultMsg {
        match self.recv_where(|m| matches!(m, WireMessage::Result(_))) {
            WireMessage::Result(r) => r,
            _ => unreachable!(),
        }
    }

    pub fn stats(&mut self, target: u32) -> StatsMsg {
        self.send(&WireMessage::StatsRequest { target });
        match self.recv_where(|m| matches!(m, WireMessage::Stats(_))) {
            WireMessage::Stats(s) => s,
            _ => unreachable!(),
        }
    }

    pub fn set_processor(&self, target: u32, id: &str, options: &str) {
        self.send(&WireMessage::SetProcessor {
            target,
            id: id.into(),
            options: options.into(),
        });
    }

    pub fn send_frame(&self, frame: &Frame) {
        self.send(&WireMessage::Frame(FrameMsg::from_frame(frame)));
    }
}

pub fn gray_frame(seq: u32, w: u32, h: u32, value: u8) -> Frame {
    let img = LumaImage {
        width: w,
        height: h,
        data: vec![value; (w * h) as usize],
    };
    img.into_frame(seq, seq as u64 * 1000).unwrap()
}

/// Polls until `cond` holds or ten seconds pass.
pub fn eventually(mut cond: impl FnMut() -> bool) -> bool {
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    while std::time::Instant::now() < deadline {
        if cond() {
            return true;
        }
        thread::sleep(Duration::from_millis(10));
    }
    false
}
