use std::net::SocketAddr;
use std::process::ExitCode;

use clap::Parser;
use framerelay_cli::mock::{router, MockConfig, MockState, DEFAULT_LISTEN};

/// Deterministic stand-in for a chat-completions description service.
#[derive(Debug, Parser)]
#[command(name = "mock-inference", version)]
struct Args {
    #[arg(long, default_value = DEFAULT_LISTEN)]
    listen: SocketAddr,
    /// Delay before every response.
    #[arg(long, env = "MOCK_LATENCY_MS", default_value_t = 0)]
    latency_ms: u64,
    /// Answer every Nth completion request with 500 (0 = never).
    #[arg(long, default_value_t = 0)]
    fail_every: u64,
}

#[tokio::main]
async fn main() -> ExitCode {
    let args = Args::parse();
    let _ = framerelay_cli::init_logging("info");
    let config = MockConfig {
        listen: args.listen,
        latency_ms: args.latency_ms,
        fail_every: args.fail_every,
    };
    let listener = match tokio::net::TcpListener::bind(config.listen).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("mock-inference: cannot listen on {}: {e}", config.listen);
            return ExitCode::from(3);
        }
    };
    match listener.local_addr() {
        Ok(addr) => eprintln!("mock-inference listening on {addr}"),
        Err(e) => eprintln!("mock-inference: {e}"),
    }
    let app = router(MockState::new(config));
    let served = axum::serve(listener, app).with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    });
    match served.await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mock-inference: {e}");
            ExitCode::from(1)
        }
    }
}
