use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::process::{Child, Command, Stdio};
use std::time::{Duration, Instant};

const DAEMON: &str = env!("CARGO_BIN_EXE_cyton-daemon");
const SIM: &str = env!("CARGO_BIN_EXE_cyton-sim");

fn exit_code(args: &[&str]) -> i32 {
    Command::new(DAEMON)
        .args(args)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap()
        .code()
        .unwrap()
}

#[test]
fn help_exits_cleanly() {
    assert_eq!(exit_code(&["--help"]), 0);
    assert_eq!(exit_code(&["--version"]), 0);
}

#[test]
fn configuration_errors_exit_with_one() {
    assert_eq!(exit_code(&["--no-such-flag"]), 1);
    assert_eq!(exit_code(&["--config", "/nonexistent/cyton.json"]), 1);
    let dir = std::env::temp_dir().join(format!("cyton-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.json");
    std::fs::write(&bad, r#"{"filter": {"bandpass_low": 80, "bandpass_high": 10}}"#).unwrap();
    assert_eq!(exit_code(&["--config", bad.to_str().unwrap()]), 1);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_device_exits_with_two() {
    assert_eq!(
        exit_code(&["--transport", "serial:/nonexistent/ttyUSB9", "--tcp-port", "0", "--ws-port", "0"]),
        2
    );
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

struct Reaper(Child);

impl Drop for Reaper {
    fn drop(&mut self) {
        if matches!(self.0.try_wait(), Ok(Some(_))) {
            return;
        }
        // SAFETY: plain kill(2) on our own child.
        unsafe { libc::kill(self.0.id() as i32, libc::SIGTERM) };
        let _ = self.0.wait();
    }
}

#[test]
fn daemon_binary_streams_from_simulator_binary() {
    let mut sim = Reaper(Command::new(SIM).stdout(Stdio::piped()).spawn().unwrap());
    let mut line = String::new();
    BufReader::new(sim.0.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let tty = line.trim().to_string();
    assert!(tty.starts_with("/dev/"), "{tty}");

    let port = free_port();
    let ws = free_port();
    let daemon = Reaper(
        Command::new(DAEMON)
            .args(["--transport", &format!("serial:{tty}"), "--tcp-port", &port.to_string()])
            .args(["--ws-port", &ws.to_string(), "--log-level", "warn"])
            .spawn()
            .unwrap(),
    );
    let t = Instant::now();
    let stream = loop {
        match TcpStream::connect(("127.0.0.1", port)) {
            Ok(s) => break s,
            Err(_) if t.elapsed() < Duration::from_secs(10) => std::thread::sleep(Duration::from_millis(50)),
            Err(e) => panic!("daemon never listened: {e}"),
        }
    };
    stream.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
    let mut w = stream.try_clone().unwrap();
    w.write_all(b"{\"type\":\"subscribe\",\"stream\":\"raw\"}\n{\"type\":\"command\",\"command\":\"start\"}\n")
        .unwrap();
    let mut frames = 0;
    for line in BufReader::new(stream).lines() {
        let v: serde_json::Value = serde_json::from_str(&line.unwrap()).unwrap();
        if v["type"] == "data" {
            frames += v["frames"].as_array().unwrap().len();
            if frames >= 250 {
                break;
            }
        }
    }
    assert!(frames >= 250);

    let mut daemon = daemon;
    // SAFETY: plain kill(2) on our own child.
    unsafe { libc::kill(daemon.0.id() as i32, libc::SIGINT) };
    let status = daemon.0.wait().unwrap();
    assert_eq!(status.code(), Some(0));
    drop(sim);
}
