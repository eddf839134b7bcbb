//! Session table, per-session state and result emission.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use bytes::Bytes;
use framerelay_core::framework::Dispatch;
use framerelay_core::wire::{ResultMsg, Role, SessionEntry, StatsMsg};
use framerelay_core::{encode_message, Registry, SessionPipeline, WireMessage};
use parking_lot::{Mutex, RwLock};
use tokio::sync::mpsc;

use super::dedup::{DedupPolicy, Verdict};
use super::{Clock, ServerConfig};

#[derive(Debug)]
pub(crate) enum Outgoing {
    Body(Bytes),
    Close,
}

/// Sending half of a connection's writer queue. Bodies are unframed; the
/// writer adds transport framing.
#[derive(Debug, Clone)]
pub(crate) struct Outbound(mpsc::UnboundedSender<Outgoing>);

impl Outbound {
    pub fn new() -> (Self, mpsc::UnboundedReceiver<Outgoing>) {
        let (tx, rx) = mpsc::unbounded_channel();
        (Outbound(tx), rx)
    }

    /// False once the connection's writer has gone away.
    pub fn send(&self, msg: &WireMessage) -> bool {
        match encode_message(msg) {
            Ok(body) => self.send_body(Bytes::from(body)),
            Err(e) => {
                tracing::error!(error = %e, kind = ?msg.message_type(), "dropping unencodable message");
                true
            }
        }
    }

    pub fn send_body(&self, body: Bytes) -> bool {
        self.0.send(Outgoing::Body(body)).is_ok()
    }

    pub fn close(&self) {
        let _ = self.0.send(Outgoing::Close);
    }
}

pub(crate) struct SourceSide {
    pub pipeline: SessionPipeline,
    /// Consoles mirroring this session, by session id.
    pub subscribers: Mutex<Vec<(u32, Outbound)>>,
    dedup: Mutex<DedupPolicy>,
}

pub(crate) struct Session {
    pub id: u32,
    pub name: String,
    pub out: Outbound,
    /// Present for source sessions only.
    pub source: Option<SourceSide>,
}

impl Session {
    pub fn role(&self) -> Role {
        if self.source.is_some() {
            Role::Source
        } else {
            Role::Console
        }
    }

    pub fn stats(&self) -> StatsMsg {
        let c = self
            .source
            .as_ref()
            .map(|s| s.pipeline.counters().snapshot())
            .unwrap_or_default();
        StatsMsg {
            session_id: self.id,
            frames_received: c.frames_received,
            frames_processed: c.frames_processed,
            frames_dropped: c.frames_dropped,
            descriptions_suppressed: c.descriptions_suppressed,
        }
    }
}

pub(crate) struct State {
    pub registry: Arc<Registry>,
    pub config: ServerConfig,
    pub clock: Clock,
    sessions: RwLock<HashMap<u32, Arc<Session>>>,
    next_id: AtomicU32,
}

impl State {
    pub fn new(registry: Arc<Registry>, config: ServerConfig, clock: Clock) -> Self {
        State {
            registry,
            config,
            clock,
            sessions: RwLock::new(HashMap::new()),
            next_id: AtomicU32::new(1),
        }
    }

    pub fn get(&self, id: u32) -> Option<Arc<Session>> {
        self.sessions.read().get(&id).cloned()
    }

    /// Creates and registers a session. Source sessions get a pipeline with
    /// the default processor and a dispatcher thread.
    pub fn open_session(self: &Arc<Self>, role: Role, name: String, out: Outbound) -> Result<Arc<Session>, String> {
        let source = match role {
            Role::Console => None,
            Role::Source => {
                let pipeline = SessionPipeline::new(
                    self.registry.clone(),
                    &self.config.default_processor,
                    &Default::default(),
                )
                .map_err(|e| format!("cannot start default processor: {e}"))?;
                Some(SourceSide {
                    pipeline,
                    subscribers: Mutex::new(Vec::new()),
                    dedup: Mutex::new(DedupPolicy::new(self.config.dedup_window_ms)),
                })
            }
        };
        let id = self.next_id.fetch_add(1, Ordering::SeqCst);
        let session = Arc::new(Session { id, name, out, source });
        self.sessions.write().insert(id, session.clone());
        if session.source.is_some() {
            spawn_dispatcher(self.clone(), session.clone());
        }
        tracing::info!(session = id, role = ?role, name = %session.name, "session opened");
        Ok(session)
    }

    pub fn close_session(&self, session: &Session) {
        self.sessions.write().remove(&session.id);
        match &session.source {
            Some(src) => src.pipeline.mailbox().close(),
            None => {
                for s in self.sessions.read().values() {
                    if let Some(src) = &s.source {
                        src.subscribers.lock().retain(|(id, _)| *id != session.id);
                    }
                }
            }
        }
        tracing::info!(session = session.id, "session closed");
    }

    pub fn close_all(&self) {
        let all: Vec<Arc<Session>> = self.sessions.write().drain().map(|(_, s)| s).collect();
        for s in all {
            if let Some(src) = &s.source {
                src.pipeline.mailbox().close();
            }
            s.out.close();
        }
    }

    /// Live source sessions in id order.
    pub fn source_list(&self) -> Vec<SessionEntry> {
        let mut list: Vec<SessionEntry> = self
            .sessions
            .read()
            .values()
            .filter_map(|s| {
                let src = s.source.as_ref()?;
                Some(SessionEntry {
                    session_id: s.id,
                    name: s.name.clone(),
                    current_processor: src.pipeline.current_processor().0.to_string(),
                })
            })
            .collect();
        list.sort_by_key(|e| e.session_id);
        list
    }
}

fn spawn_dispatcher(state: Arc<State>, session: Arc<Session>) {
    let name = format!("dispatch-{}", session.id);
    thread::Builder::new()
        .name(name)
        .spawn(move || {
            let src = session.source.as_ref().expect("dispatcher runs for source sessions");
            let mailbox = src.pipeline.mailbox();
            loop {
                match mailbox.wait_take(Duration::from_secs(1)) {
                    Some(pending) => {
                        let dispatch = src.pipeline.dispatch(pending);
                        emit(&state, &session, dispatch);
                    }
                    None if mailbox.is_closed() => break,
                    None => {}
                }
            }
        })
        .expect("spawn dispatcher thread");
}

/// Applies the dedup policy and sends the RESULT to the owner and, as the
/// same bytes, to every subscriber. A processor failure is also reported to
/// the owner as ERROR(5).
fn emit(state: &State, session: &Session, dispatch: Dispatch) {
    let src = session.source.as_ref().expect("results come from source sessions");
    let mut result = dispatch.result;
    if let Some(desc) = &result.description {
        let now = (state.clock)();
        if src.dedup.lock().filter(desc.priority, &desc.text, now) == Verdict::Suppress {
            result.description = None;
            src.pipeline
                .counters()
                .descriptions_suppressed
                .fetch_add(1, Ordering::SeqCst);
        }
    }
    let body = match encode_message(&WireMessage::Result(ResultMsg::from_result(&result))) {
        Ok(b) => Bytes::from(b),
        Err(e) => {
            tracing::error!(session = session.id, error = %e, "result could not be encoded");
            return;
        }
    };
    session.out.send_body(body.clone());
    src.subscribers.lock().retain(|(_, out)| out.send_body(body.clone()));
    if let Some(reason) = dispatch.failure {
        session.out.send(&WireMessage::error(
            framerelay_core::wire::ErrorCode::Internal,
            format!("processor {} failed: {reason}", result.processor),
        ));
    }
}
