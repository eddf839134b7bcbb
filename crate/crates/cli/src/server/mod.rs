//! The relay server: TCP and WebSocket listeners sharing one session table.

mod conn;
pub mod dedup;
mod session;

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use framerelay_core::wire::decode_body;
use framerelay_core::{Registry, StreamDecoder};
use futures::{SinkExt, StreamExt};
use thiserror::Error;
use tokio::io::{AsyncReadExt, AsyncWriteExt, BufWriter};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio_tungstenite::tungstenite::Message;

use conn::{Conn, Flow};
use session::{Outbound, Outgoing, State};

pub use dedup::{DedupPolicy, Verdict, DEFAULT_WINDOW_MS};

pub const DEFAULT_TCP_LISTEN: &str = "127.0.0.1:7001";
pub const DEFAULT_WS_LISTEN: &str = "127.0.0.1:7002";
pub const DEFAULT_PROCESSOR: &str = "scene_change";

/// Milliseconds on a monotonic clock; drives the dedup window.
pub type Clock = Arc<dyn Fn() -> u64 + Send + Sync>;

pub fn monotonic_clock() -> Clock {
    let epoch = Instant::now();
    Arc::new(move || epoch.elapsed().as_millis() as u64)
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub tcp_listen: SocketAddr,
    pub ws_listen: SocketAddr,
    pub default_processor: String,
    pub dedup_window_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            tcp_listen: DEFAULT_TCP_LISTEN.parse().expect("valid default"),
            ws_listen: DEFAULT_WS_LISTEN.parse().expect("valid default"),
            default_processor: DEFAULT_PROCESSOR.to_owned(),
            dedup_window_ms: DEFAULT_WINDOW_MS,
        }
    }
}

impl ServerConfig {
    /// Ephemeral ports on localhost, for tests.
    pub fn ephemeral() -> Self {
        ServerConfig {
            tcp_listen: "127.0.0.1:0".parse().expect("valid"),
            ws_listen: "127.0.0.1:0".parse().expect("valid"),
            ..Self::default()
        }
    }

    pub fn validate(&self, registry: &Registry) -> Result<(), ServerError> {
        if self.tcp_listen == self.ws_listen && self.tcp_listen.port() != 0 {
            return Err(ServerError::Config(format!(
                "TCP and WebSocket listeners both set to {}",
                self.tcp_listen
            )));
        }
        if !registry.contains(&self.default_processor) {
            return Err(ServerError::Config(format!(
                "default processor {:?} is not registered",
                self.default_processor
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: io::Error,
    },
    #[error("runtime: {0}")]
    Runtime(#[source] io::Error),
}

pub struct Server {
    tcp: TcpListener,
    ws: TcpListener,
    state: Arc<State>,
}

impl Server {
    pub async fn bind(config: ServerConfig, registry: Arc<Registry>) -> Result<Server, ServerError> {
        Self::bind_with_clock(config, registry, monotonic_clock()).await
    }

    pub async fn bind_with_clock(
        config: ServerConfig,
        registry: Arc<Registry>,
        clock: Clock,
    ) -> Result<Server, ServerError> {
        config.validate(&registry)?;
        let bind = |addr: SocketAddr| async move {
            TcpListener::bind(addr)
                .await
                .map_err(|source| ServerError::Bind { addr, source })
        };
        let tcp = bind(config.tcp_listen).await?;
        let ws = bind(config.ws_listen).await?;
        Ok(Server {
            tcp,
            ws,
            state: Arc::new(State::new(registry, config, clock)),
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp.local_addr().expect("bound listener has an address")
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws.local_addr().expect("bound listener has an address")
    }

    /// Accepts connections until `shutdown` resolves, then closes every
    /// session.
    pub async fn run(self, shutdown: impl Future<Output = ()>) {
        tracing::info!(tcp = %self.tcp_addr(), ws = %self.ws_addr(), "relay server listening");
        tokio::pin!(shutdown);
        loop {
            tokio::select! {
                _ = &mut shutdown => break,
                accepted = self.tcp.accept() => match accepted {
                    Ok((stream, peer)) => {
                        tokio::spawn(serve_tcp(self.state.clone(), stream, peer));
                    }
                    Err(e) => tracing::warn!(error = %e, "tcp accept failed"),
                },
                accepted = self.ws.accept() => match accepted {
                    Ok((stream, peer)) => {
                        tokio::spawn(serve_ws(self.state.clone(), stream, peer));
                    }
                    Err(e) => tracing::warn!(error = %e, "ws accept failed"),
                },
            }
        }
        self.state.close_all();
        tracing::info!("relay server stopped");
    }
}

async fn serve_tcp(state: Arc<State>, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let (mut rd, wr) = stream.into_split();
    let (out, rx) = Outbound::new();
    let writer = tokio::spawn(tcp_writer(wr, rx));
    let mut conn = Conn::new(state, out, peer);
    let mut decoder = StreamDecoder::new();
    let mut buf = vec![0u8; 64 * 1024];
    'read: loop {
        let n = match rd.read(&mut buf).await {
            Ok(0) => break,
            Ok(n) => n,
            Err(e) => {
                tracing::debug!(%peer, error = %e, "tcp read failed");
                break;
            }
        };
        decoder.extend(&buf[..n]);
        loop {
            match decoder.next_message() {
                Ok(Some(msg)) => {
                    if conn.on_message(msg) == Flow::Close {
                        break 'read;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    conn.on_malformed(&e);
                    break 'read;
                }
            }
        }
    }
    conn.finish();
    let _ = writer.await;
}

async fn tcp_writer(wr: tokio::net::tcp::OwnedWriteHalf, mut rx: mpsc::UnboundedReceiver<Outgoing>) -> io::Result<()> {
    let mut w = BufWriter::new(wr);
    while let Some(first) = rx.recv().await {
        let mut next = Some(first);
        while let Some(item) = next.take() {
            match item {
                Outgoing::Body(body) => {
                    w.write_all(&(body.len() as u32).to_le_bytes()).await?;
                    w.write_all(&body).await?;
                }
                Outgoing::Close => {
                    w.flush().await?;
                    return w.shutdown().await;
                }
            }
            next = rx.try_recv().ok();
        }
        w.flush().await?;
    }
    Ok(())
}

async fn serve_ws(state: Arc<State>, stream: TcpStream, peer: SocketAddr) {
    let _ = stream.set_nodelay(true);
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!(%peer, error = %e, "websocket handshake failed");
            return;
        }
    };
    let (mut sink, mut source) = ws.split();
    let (out, mut rx) = Outbound::new();
    let writer = tokio::spawn(async move {
        while let Some(item) = rx.recv().await {
            match item {
                Outgoing::Body(body) => {
                    if sink.send(Message::Binary(body)).await.is_err() {
                        return;
                    }
                }
                Outgoing::Close => {
                    let _ = sink.send(Message::Close(None)).await;
                    let _ = sink.close().await;
                    return;
                }
            }
        }
    });
    let mut conn = Conn::new(state, out, peer);
    while let Some(msg) = source.next().await {
        let flow = match msg {
            Ok(Message::Binary(body)) => match decode_body(&body) {
                Ok(m) => conn.on_message(m),
                Err(e) => conn.on_malformed(&e),
            },
            Ok(Message::Text(_)) => conn.reject("text messages are not part of the protocol"),
            Ok(Message::Close(_)) => Flow::Close,
            Ok(_) => Flow::Continue,
            Err(e) => {
                tracing::debug!(%peer, error = %e, "websocket read failed");
                Flow::Close
            }
        };
        if flow == Flow::Close {
            break;
        }
    }
    conn.finish();
    let _ = writer.await;
}

/// A server running on its own runtime thread; stops when dropped.
pub struct ServerHandle {
    tcp_addr: SocketAddr,
    ws_addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn start(config: ServerConfig, registry: Arc<Registry>) -> Result<Self, ServerError> {
        Self::start_with_clock(config, registry, monotonic_clock())
    }

    pub fn start_with_clock(config: ServerConfig, registry: Arc<Registry>, clock: Clock) -> Result<Self, ServerError> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(ServerError::Runtime)?;
        let server = runtime.block_on(Server::bind_with_clock(config, registry, clock))?;
        let (tcp_addr, ws_addr) = (server.tcp_addr(), server.ws_addr());
        let (stop, stopped) = oneshot::channel::<()>();
        let thread = thread::Builder::new()
            .name("relay-server".into())
            .spawn(move || {
                runtime.block_on(server.run(async {
                    let _ = stopped.await;
                }));
                runtime.shutdown_background();
            })
            .map_err(ServerError::Runtime)?;
        Ok(ServerHandle {
            tcp_addr,
            ws_addr,
            stop: Some(stop),
            thread: Some(thread),
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(stop) = self.stop.take() {
            let _ = stop.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}
