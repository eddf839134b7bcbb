//! Protocol handling for one connection, independent of transport.

use std::net::SocketAddr;
use std::sync::Arc;

use framerelay_core::framework::CreateError;
use framerelay_core::wire::{
    AckStatus, ErrorCode, FrameMsg, Malformed, ProcessorEntry, Role, PROTOCOL_VERSION,
};
use framerelay_core::{encode_message, ProcessorOptions, WireMessage};

use super::session::{Outbound, Session, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Flow {
    Continue,
    Close,
}

pub(crate) struct Conn {
    state: Arc<State>,
    out: Outbound,
    session: Option<Arc<Session>>,
    peer: SocketAddr,
}

impl Conn {
    pub fn new(state: Arc<State>, out: Outbound, peer: SocketAddr) -> Self {
        Conn {
            state,
            out,
            session: None,
            peer,
        }
    }

    fn error(&self, code: ErrorCode, message: impl Into<String>) {
        self.out.send(&WireMessage::error(code, message));
    }

    /// A decode failure ends the connection after telling the peer why.
    pub fn on_malformed(&mut self, err: &Malformed) -> Flow {
        tracing::warn!(peer = %self.peer, error = %err, "malformed message");
        let code = match err {
            Malformed::BodyTooLarge(_) => ErrorCode::FrameTooLarge,
            _ => ErrorCode::Malformed,
        };
        self.error(code, err.to_string());
        Flow::Close
    }

    /// Ends the connection over a transport-level protocol violation.
    pub fn reject(&mut self, reason: &str) -> Flow {
        tracing::warn!(peer = %self.peer, reason, "protocol violation");
        self.error(ErrorCode::Malformed, reason);
        Flow::Close
    }

    pub fn on_message(&mut self, msg: WireMessage) -> Flow {
        let Some(session) = self.session.clone() else {
            return match msg {
                WireMessage::Hello { version, role, name } => self.accept(version, role, name),
                other => {
                    self.error(
                        ErrorCode::Malformed,
                        format!("expected HELLO, got {:?}", other.message_type()),
                    );
                    Flow::Close
                }
            };
        };
        match msg {
            WireMessage::Hello { .. } => self.error(ErrorCode::Malformed, "session already established"),
            WireMessage::ListProcessors => {
                let list = self
                    .state
                    .registry
                    .list_processors()
                    .into_iter()
                    .map(|d| ProcessorEntry {
                        id: d.id.to_string(),
                        display_name: d.display_name,
                        remote: d.remote,
                    })
                    .collect();
                self.out.send(&WireMessage::ProcessorList(list));
            }
            WireMessage::SetProcessor { target, id, options } => self.set_processor(&session, target, id, options),
            WireMessage::Frame(frame) => self.frame(&session, frame),
            WireMessage::Ping(token) => {
                self.out.send(&WireMessage::Pong(token));
            }
            WireMessage::StatsRequest { target } => {
                let id = if target == 0 { session.id } else { target };
                match self.state.get(id) {
                    Some(s) => {
                        self.out.send(&WireMessage::Stats(s.stats()));
                    }
                    None => self.error(ErrorCode::Malformed, format!("no such session {id}")),
                }
            }
            WireMessage::SessionListRequest => {
                self.out.send(&WireMessage::SessionList(self.state.source_list()));
            }
            WireMessage::Subscribe { target } => self.subscribe(&session, target),
            other => self.error(
                ErrorCode::Malformed,
                format!("{:?} is not accepted from clients", other.message_type()),
            ),
        }
        Flow::Continue
    }

    fn accept(&mut self, version: u8, role: Role, name: String) -> Flow {
        if version != PROTOCOL_VERSION {
            self.error(
                ErrorCode::UnsupportedVersion,
                format!("protocol version {version} unsupported, expected {PROTOCOL_VERSION}"),
            );
            return Flow::Close;
        }
        match self.state.open_session(role, name, self.out.clone()) {
            Ok(session) => {
                self.out.send(&WireMessage::HelloAck {
                    session_id: session.id,
                    server_version: PROTOCOL_VERSION,
                });
                self.session = Some(session);
                Flow::Continue
            }
            Err(reason) => {
                self.error(ErrorCode::Internal, reason);
                Flow::Close
            }
        }
    }

    fn frame(&self, session: &Session, frame: FrameMsg) {
        let Some(src) = &session.source else {
            self.error(ErrorCode::Malformed, "console sessions cannot send frames");
            return;
        };
        match frame.to_frame() {
            Ok(frame) => {
                src.pipeline.submit_frame(frame);
            }
            Err(violation) => {
                src.pipeline
                    .counters()
                    .frames_received
                    .fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                let code = if violation.is_oversize() {
                    ErrorCode::FrameTooLarge
                } else {
                    ErrorCode::Malformed
                };
                self.error(code, format!("frame rejected: {violation}"));
            }
        }
    }

    fn set_processor(&self, session: &Arc<Session>, target: u32, id: String, options: String) {
        let resolved = if target == 0 { session.id } else { target };
        let reply = |status: AckStatus| {
            self.out.send(&WireMessage::SetProcessorAck {
                target: resolved,
                id: id.clone(),
                status,
            });
        };
        let target_session = if resolved == session.id {
            session.clone()
        } else if session.role() == Role::Source {
            return reply(AckStatus::NotPermitted);
        } else {
            match self.state.get(resolved) {
                Some(s) => s,
                None => return reply(AckStatus::NoSuchSession),
            }
        };
        let Some(src) = &target_session.source else {
            return reply(AckStatus::NotPermitted);
        };
        let opts = match ProcessorOptions::parse(&options) {
            Ok(o) => o,
            Err(e) => {
                tracing::debug!(error = %e, "bad processor options");
                return reply(AckStatus::BadOptions);
            }
        };
        let outcome = src.pipeline.switch_processor(&id, &opts, |new_id| {
            let ack = WireMessage::SetProcessorAck {
                target: resolved,
                id: new_id.to_string(),
                status: AckStatus::Ok,
            };
            let body = match encode_message(&ack) {
                Ok(b) => bytes::Bytes::from(b),
                Err(_) => return,
            };
            target_session.out.send_body(body.clone());
            let subs = src.subscribers.lock();
            for (_, out) in subs.iter() {
                out.send_body(body.clone());
            }
            let requester_covered = session.id == target_session.id || subs.iter().any(|(sid, _)| *sid == session.id);
            if !requester_covered {
                self.out.send_body(body);
            }
        });
        match outcome {
            Ok(new_id) => tracing::info!(session = resolved, processor = %new_id, "processor switched"),
            Err(CreateError::UnknownId(_)) => reply(AckStatus::UnknownId),
            Err(CreateError::BadOptions(e)) => {
                tracing::debug!(error = %e, "processor rejected options");
                reply(AckStatus::BadOptions)
            }
        }
    }

    fn subscribe(&self, session: &Session, target: u32) {
        if session.source.is_some() {
            self.error(ErrorCode::Malformed, "only console sessions can subscribe");
            return;
        }
        let resolved = if target == 0 { session.id } else { target };
        let status = match self.state.get(resolved) {
            Some(t) => match &t.source {
                Some(src) => {
                    let mut subs = src.subscribers.lock();
                    if !subs.iter().any(|(id, _)| *id == session.id) {
                        subs.push((session.id, self.out.clone()));
                    }
                    AckStatus::Ok
                }
                None => AckStatus::NoSuchSession,
            },
            None => AckStatus::NoSuchSession,
        };
        self.out.send(&WireMessage::SubscribeAck {
            target: resolved,
            status,
        });
    }

    /// Removes the session and stops the writer after queued messages.
    pub fn finish(self) {
        if let Some(session) = &self.session {
            self.state.close_session(session);
        }
        self.out.close();
    }
}
