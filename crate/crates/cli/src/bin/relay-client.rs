use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use framerelay_cli::client::{run_session, ClientConfig, TRAILING_WAIT};
use framerelay_core::SourceSpec;

/// Streams frames from a directory or a synthetic generator to a relay
/// server and prints the returned descriptions.
#[derive(Debug, Parser)]
#[command(name = "relay-client", version)]
struct Args {
    /// Server address, HOST:PORT.
    #[arg(long, default_value = "127.0.0.1:7001")]
    server: String,
    /// dir:<path>, synthetic:bars, synthetic:moving_box or synthetic:text=<TEXT>.
    #[arg(long)]
    source: SourceSpec,
    /// Frames per second.
    #[arg(long, default_value_t = 5.0)]
    fps: f64,
    /// Processor to select before streaming.
    #[arg(long)]
    processor: Option<String>,
    /// Processor options, "key=value;key=value".
    #[arg(long, default_value = "")]
    options: String,
    /// Start the source over when it runs out.
    #[arg(long = "loop")]
    looping: bool,
    /// Stop after this many frames.
    #[arg(long)]
    max_frames: Option<u64>,
    /// Shell command that receives each description on standard input.
    #[arg(long)]
    tts_cmd: Option<String>,
    #[arg(long, default_value = "relay-client")]
    name: String,
    /// Print a stats line every N seconds.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    stats_interval_s: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if !(args.fps.is_finite() && args.fps > 0.0) {
        eprintln!("relay-client: --fps must be greater than 0");
        return ExitCode::from(2);
    }
    let config = ClientConfig {
        server: args.server,
        source: args.source,
        fps: args.fps,
        processor: args.processor,
        options: args.options,
        looping: args.looping,
        max_frames: args.max_frames,
        tts_cmd: args.tts_cmd,
        name: args.name,
        stats_interval: args.stats_interval_s.map(Duration::from_secs),
        trailing_wait: TRAILING_WAIT,
    };
    let report = run_session(&config, Box::new(std::io::stdout()));
    ExitCode::from(report.exit.code() as u8)
}
