use std::net::SocketAddr;
use std::process::ExitCode;
use std::sync::atomic::AtomicU64;
use std::sync::Arc;

use clap::Parser;
use framerelay_cli::server::{Server, ServerConfig, ServerError, DEFAULT_PROCESSOR, DEFAULT_WINDOW_MS};
use framerelay_core::processors::remote_vlm::DEFAULT_TIMEOUT_MS;
use framerelay_core::{register_builtins, Registry, VlmConfig};

/// Relays camera frames to per-session processors and returns annotations
/// and spoken descriptions.
#[derive(Debug, Parser)]
#[command(name = "relay-server", version)]
struct Args {
    /// Listener for length-prefixed TCP clients.
    #[arg(long, default_value = "127.0.0.1:7001")]
    tcp_listen: SocketAddr,
    /// Listener for WebSocket clients (one message per binary frame).
    #[arg(long, default_value = "127.0.0.1:7002")]
    ws_listen: SocketAddr,
    /// Base URL of an OpenAI-compatible chat-completions service.
    #[arg(long, env = "RELAY_VLM_ENDPOINT")]
    vlm_endpoint: Option<String>,
    #[arg(long, env = "RELAY_VLM_MODEL", default_value = "mock-vlm")]
    vlm_model: String,
    #[arg(long, env = "RELAY_VLM_TIMEOUT_MS", default_value_t = DEFAULT_TIMEOUT_MS)]
    vlm_timeout_ms: u64,
    /// Bearer token forwarded to the description service.
    #[arg(long, env = "RELAY_VLM_TOKEN", hide_env_values = true)]
    vlm_token: Option<String>,
    /// Processor every new source session starts with.
    #[arg(long, default_value = DEFAULT_PROCESSOR)]
    default_processor: String,
    /// Identical routine descriptions within this many ms are not repeated.
    #[arg(long, default_value_t = DEFAULT_WINDOW_MS)]
    dedup_ms: u64,
    #[arg(long, default_value = "info")]
    log_level: String,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Err(e) = framerelay_cli::init_logging(&args.log_level) {
        eprintln!("relay-server: {e}");
        return ExitCode::from(2);
    }
    let vlm = VlmConfig {
        endpoint: args.vlm_endpoint.unwrap_or_default(),
        model: args.vlm_model,
        timeout_ms: args.vlm_timeout_ms,
        bearer_token: args.vlm_token.filter(|t| !t.is_empty()),
        ..VlmConfig::default()
    };
    if vlm.endpoint.is_empty() {
        tracing::warn!("no description service endpoint; remote_vlm selections will be refused");
    }
    let mut registry = Registry::new();
    register_builtins(&mut registry, vlm, Arc::new(AtomicU64::new(0))).expect("builtins register once");
    registry.seal();
    let config = ServerConfig {
        tcp_listen: args.tcp_listen,
        ws_listen: args.ws_listen,
        default_processor: args.default_processor,
        dedup_window_ms: args.dedup_ms,
    };
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("relay-server: {e}");
            return ExitCode::from(1);
        }
    };
    runtime.block_on(async {
        let server = match Server::bind(config, Arc::new(registry)).await {
            Ok(s) => s,
            Err(e) => {
                eprintln!("relay-server: {e}");
                return match e {
                    ServerError::Bind { .. } => ExitCode::from(3),
                    _ => ExitCode::from(2),
                };
            }
        };
        server
            .run(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await;
        ExitCode::SUCCESS
    })
}
