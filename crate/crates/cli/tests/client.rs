mod common;

use std::io::{self, Read, Write};
use std::net::TcpListener;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use framerelay_cli::client::{parse_transcript_line, run_session, ClientConfig, ExitStatus};
use framerelay_core::model::PixelFormat;
use framerelay_core::processors::glyph::{render_text, text_width, GLYPH_HEIGHT};
use framerelay_core::source::write_pnm;
use framerelay_core::wire::{AckStatus, ErrorCode};
use framerelay_core::{encode_tcp, LumaImage, Priority, SourceSpec, WireMessage};

/// A `Write` whose contents the test can read afterwards.
#[derive(Clone, Default)]
struct Sink(Arc<Mutex<Vec<u8>>>);

impl Write for Sink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

impl Sink {
    fn text(&self) -> String {
        String::from_utf8(self.0.lock().unwrap().clone()).unwrap()
    }
}

fn write_gray_dir(dir: &Path, n: usize) {
    for i in 0..n {
        let pixels = vec![(i * 20) as u8; 32 * 24];
        std::fs::write(dir.join(format!("f{i:03}.pgm")), write_pnm(32, 24, PixelFormat::Gray8, &pixels)).unwrap();
    }
}

#[test]
fn directory_source_runs_to_completion() {
    let server = start_server();
    let dir = tempfile::tempdir().unwrap();
    write_gray_dir(dir.path(), 10);
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::Dir(dir.path().into()));
    config.fps = 50.0;
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Ok);
    assert_eq!(report.frames_sent, 10);
    assert_eq!(report.last_sent_seq, Some(10));
    let stats = report.final_stats.unwrap();
    assert_eq!(stats.frames_received, 10);
    assert_eq!(stats.frames_processed + stats.frames_dropped, 10);
}

#[test]
fn unreachable_server_exits_with_connect_failure() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let config = ClientConfig::new(format!("127.0.0.1:{port}"), SourceSpec::Bars);
    assert_eq!(run_session(&config, Box::new(io::sink())).exit, ExitStatus::ConnectFailure);
}

#[test]
fn bad_arguments_exit_before_connecting() {
    let mut config = ClientConfig::new("127.0.0.1:1", SourceSpec::Bars);
    config.fps = 0.0;
    assert_eq!(run_session(&config, Box::new(io::sink())).exit, ExitStatus::BadArguments);
    let config = ClientConfig::new("127.0.0.1:1", SourceSpec::Dir("/nonexistent/frames".into()));
    assert_eq!(run_session(&config, Box::new(io::sink())).exit, ExitStatus::BadArguments);
}

#[test]
fn rejected_processor_is_reported_and_streaming_continues() {
    let server = start_server();
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::Bars);
    config.processor = Some("nope".into());
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Ok);
    assert_eq!(report.processor_ack, Some(AckStatus::UnknownId));
    assert_eq!(report.frames_sent, 1);
    assert_eq!(report.last_result_seq, Some(1));
}

#[test]
fn text_source_is_read_back() {
    let server = start_server();
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::Text("EXIT".into()));
    config.processor = Some("glyph_ocr".into());
    let sink = Sink::default();
    let report = run_session(&config, Box::new(sink.clone()));
    assert_eq!(report.exit, ExitStatus::Ok);
    assert_eq!(report.processor_ack, Some(AckStatus::Ok));
    assert_eq!(sink.text(), "[seq=1][proc=glyph_ocr][p=routine] EXIT\n");
    let line = parse_transcript_line(sink.text().trim_end()).unwrap();
    assert_eq!(line, (1, "glyph_ocr".into(), Priority::Routine, "EXIT".into()));
}

#[test]
fn find_item_reports_direction() {
    let server = start_server();
    let dir = tempfile::tempdir().unwrap();
    let mut img = LumaImage::new(300, 300);
    render_text(&mut img, "KEYS", (300 - text_width(4)) / 2, (300 - GLYPH_HEIGHT) / 2).unwrap();
    std::fs::write(dir.path().join("keys.pgm"), write_pnm(300, 300, PixelFormat::Gray8, &img.data)).unwrap();
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::Dir(dir.path().into()));
    config.processor = Some("find_item".into());
    config.options = "term=KEYS".into();
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Ok);
    let line = &report.transcript[0];
    assert_eq!(line.text, "KEYS at center, middle");
    assert_eq!(line.priority, Priority::Interrupt);
}

#[test]
fn speech_command_receives_each_description() {
    let server = start_server();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("spoken.txt");
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::MovingBox);
    config.processor = Some("counter".into());
    config.fps = 100.0;
    config.max_frames = Some(3);
    config.tts_cmd = Some(format!("cat >> '{}'", out.display()));
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Ok);
    let spoken = std::fs::read_to_string(&out).unwrap();
    let last = report.transcript.last().unwrap().text.clone();
    // interrupts may cut earlier utterances but never the last one
    assert!(spoken.ends_with(&format!("{last}\n")), "{spoken:?}");
}

#[test]
fn frames_are_paced_at_the_requested_rate() {
    let server = start_server();
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::MovingBox);
    config.fps = 20.0;
    config.max_frames = Some(21);
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.frames_sent, 21);
    let ms = report.send_duration.as_millis();
    assert!((800..=1200).contains(&ms), "20 intervals took {ms} ms");
}

#[test]
fn stalled_speech_does_not_slow_sending() {
    let server = start_server();
    let mut config = ClientConfig::new(server.tcp_addr().to_string(), SourceSpec::MovingBox);
    config.processor = Some("say".into());
    config.options = "text=hello".into();
    config.fps = 50.0;
    config.max_frames = Some(25);
    config.tts_cmd = Some("sleep 30".into());
    let started = Instant::now();
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Ok);
    assert!(report.send_duration < Duration::from_millis(700), "{:?}", report.send_duration);
    assert!(started.elapsed() < Duration::from_secs(10));
}

/// A server that answers the handshake and then behaves as `then` says.
fn fake_server(then: fn(&mut std::net::TcpStream)) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut hdr = [0u8; 4];
        s.read_exact(&mut hdr).unwrap();
        let mut body = vec![0u8; u32::from_le_bytes(hdr) as usize];
        s.read_exact(&mut body).unwrap();
        let ack = WireMessage::HelloAck {
            session_id: 1,
            server_version: 1,
        };
        s.write_all(&encode_tcp(&ack).unwrap()).unwrap();
        then(&mut s);
    });
    addr
}

#[test]
fn dropped_connection_exits_five() {
    let addr = fake_server(|s| {
        thread::sleep(Duration::from_millis(100));
        let _ = s.shutdown(std::net::Shutdown::Both);
    });
    let mut config = ClientConfig::new(addr, SourceSpec::MovingBox);
    config.looping = true;
    config.fps = 50.0;
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::Dropped);
}

#[test]
fn garbage_from_server_exits_four() {
    let addr = fake_server(|s| {
        s.write_all(&[1, 0, 0, 0, 0xEE]).unwrap();
        thread::sleep(Duration::from_secs(2));
    });
    let mut config = ClientConfig::new(addr, SourceSpec::MovingBox);
    config.looping = true;
    config.fps = 50.0;
    let report = run_session(&config, Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::ProtocolError);
}

#[test]
fn refused_handshake_exits_four() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let err = WireMessage::Error {
            code: ErrorCode::UnsupportedVersion,
            message: "no".into(),
        };
        s.write_all(&encode_tcp(&err).unwrap()).unwrap();
        thread::sleep(Duration::from_secs(1));
    });
    let report = run_session(&ClientConfig::new(addr, SourceSpec::Bars), Box::new(io::sink()));
    assert_eq!(report.exit, ExitStatus::ProtocolError);
}

#[test]
fn client_binary_prints_the_transcript() {
    let server = start_server();
    let out = Command::new(env!("CARGO_BIN_EXE_relay-client"))
        .args(["--server", &server.tcp_addr().to_string()])
        .args(["--source", "synthetic:text=HELLO", "--processor", "glyph_ocr"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(String::from_utf8(out.stdout).unwrap(), "[seq=1][proc=glyph_ocr][p=routine] HELLO\n");
    assert!(String::from_utf8_lossy(&out.stderr).contains("stats session=1 received=1 processed=1"));

    let out = Command::new(env!("CARGO_BIN_EXE_relay-client"))
        .args(["--source", "synthetic:nothing"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn server_binary_exit_codes() {
    let taken = TcpListener::bind("127.0.0.1:0").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_relay-server"))
        .args(["--tcp-listen", &taken.local_addr().unwrap().to_string(), "--ws-listen", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));

    let out = Command::new(env!("CARGO_BIN_EXE_relay-server"))
        .args(["--tcp-listen", "127.0.0.1:0", "--ws-listen", "127.0.0.1:0"])
        .args(["--default-processor", "nope"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
