//! Networked side of framerelay: the relay server, the streaming client,
//! the speech hook and the mock description service.

pub mod client;
pub mod mock;
pub mod server;
pub mod tts;

/// Installs a stderr logger. `level` is a tracing filter directive such as
/// `info` or `framerelay_cli=debug`.
pub fn init_logging(level: &str) -> Result<(), String> {
    let filter = tracing_subscriber::EnvFilter::try_new(level).map_err(|e| format!("invalid log level {level:?}: {e}"))?;
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init()
        .map_err(|e| e.to_string())
}
