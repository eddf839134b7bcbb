//! A deterministic chat-completions endpoint: the reply is derived from a
//! hash of the raw request body.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, State};
use axum::http::{Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::{Json, Router};
use framerelay_core::fnv1a32;
use parking_lot::Mutex;
use serde_json::json;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

pub const COMPLETIONS_PATH: &str = "/v1/chat/completions";
pub const DEFAULT_LISTEN: &str = "127.0.0.1:7010";

/// The reply content for a request body.
pub fn mock_content(body: &[u8]) -> String {
    format!("mock description {}", fnv1a32(body) % 1000)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockConfig {
    pub listen: SocketAddr,
    pub latency_ms: u64,
    /// Every Nth completion request fails with 500; 0 never fails.
    pub fail_every: u64,
}

impl Default for MockConfig {
    fn default() -> Self {
        MockConfig {
            listen: DEFAULT_LISTEN.parse().expect("valid default"),
            latency_ms: 0,
            fail_every: 0,
        }
    }
}

/// One completion request as seen by the mock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Captured {
    pub body: Vec<u8>,
    pub status: u16,
    /// The content returned on success.
    pub content: Option<String>,
}

#[derive(Debug)]
pub struct MockState {
    config: MockConfig,
    requests: AtomicU64,
    captured: Mutex<Vec<Captured>>,
}

impl MockState {
    pub fn new(config: MockConfig) -> Arc<Self> {
        Arc::new(MockState {
            config,
            requests: AtomicU64::new(0),
            captured: Mutex::new(Vec::new()),
        })
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn captured(&self) -> Vec<Captured> {
        self.captured.lock().clone()
    }
}

async fn handle(State(state): State<Arc<MockState>>, method: Method, uri: Uri, body: Bytes) -> Response {
    if method != Method::POST || uri.path() != COMPLETIONS_PATH {
        return (StatusCode::NOT_FOUND, "not found").into_response();
    }
    let n = state.requests.fetch_add(1, Ordering::SeqCst) + 1;
    if state.config.latency_ms > 0 {
        tokio::time::sleep(Duration::from_millis(state.config.latency_ms)).await;
    }
    let fail = state.config.fail_every > 0 && n % state.config.fail_every == 0;
    let (status, content) = if fail {
        (StatusCode::INTERNAL_SERVER_ERROR, None)
    } else {
        (StatusCode::OK, Some(mock_content(&body)))
    };
    state.captured.lock().push(Captured {
        body: body.to_vec(),
        status: status.as_u16(),
        content: content.clone(),
    });
    match content {
        Some(c) => (status, Json(json!({"choices": [{"message": {"content": c}}]}))).into_response(),
        None => (status, Json(json!({"error": "mock failure"}))).into_response(),
    }
}

pub fn router(state: Arc<MockState>) -> Router {
    Router::new()
        .fallback(handle)
        .layer(DefaultBodyLimit::disable())
        .with_state(state)
}

/// A mock running on its own runtime thread; stops when dropped.
pub struct MockServer {
    addr: SocketAddr,
    state: Arc<MockState>,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl MockServer {
    pub fn start(config: MockConfig) -> io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = runtime.block_on(TcpListener::bind(config.listen))?;
        let addr = listener.local_addr()?;
        let state = MockState::new(config);
        let app = router(state.clone());
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = thread::Builder::new().name("mock-inference".into()).spawn(move || {
            // in-flight requests (possibly sleeping) are abandoned on stop
            runtime.block_on(async move {
                tokio::select! {
                    _ = axum::serve(listener, app) => {}
                    _ = stopped => {}
                }
            });
            runtime.shutdown_background();
        })?;
        Ok(MockServer {
            addr,
            state,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Base URL to use as the description service endpoint.
    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn state(&self) -> &MockState {
        &self.state
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
