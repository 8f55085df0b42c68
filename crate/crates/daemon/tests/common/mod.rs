#![allow(dead_code)]

use cyton_core::clock::{Clock, ManualClock};
use cyton_core::sim::{SimConfig, SimConnector, SimHandle};
use cyton_core::transport::Connector;
use cyton_daemon::config::DaemonConfig;
use cyton_daemon::lifecycle::{Command, DaemonState};
use cyton_daemon::messages::{AcqCommand, Outbound, Request};
use cyton_daemon::protocol::{ClientMessage, ServerMessage, Status, StreamKind};
use cyton_daemon::{Daemon, Stages};
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

pub const CLIENT: u64 = 1;

/// All four stages stepped by hand on a virtual clock.
pub struct Rig {
    pub stages: Stages,
    pub sim: SimHandle,
    pub clock: Arc<ManualClock>,
    pub outbound: Vec<Outbound>,
}

impl Rig {
    pub fn new(mut cfg: DaemonConfig, sim: SimConfig) -> Self {
        cfg.sim = sim.clone();
        let clock = Arc::new(ManualClock::new());
        let dyn_clock: Arc<dyn Clock> = clock.clone();
        let mut connector = SimConnector::new(sim, dyn_clock.clone()).unwrap();
        let handle = connector.handle();
        let link = connector.connect().unwrap();
        let stages = Stages::new(&cfg, Box::new(connector), link, dyn_clock).unwrap();
        Rig {
            stages,
            sim: handle,
            clock,
            outbound: Vec::new(),
        }
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    pub fn step(&mut self) {
        self.stages.acquisition.step();
        self.stages.processing.step();
        self.stages.worker.step();
        let g = &mut self.stages.gateway;
        while let Some(o) = g.from_processing.pop() {
            self.outbound.push(o);
        }
        while let Some(o) = g.from_worker.pop() {
            self.outbound.push(o);
        }
    }

    /// Step until `done` holds; panics after `limit` of virtual time.
    pub fn run_until(&mut self, limit: Duration, mut done: impl FnMut(&mut Rig) -> bool) {
        let end = self.now() + limit;
        while !done(self) {
            assert!(self.now() < end, "condition not reached within {limit:?}");
            self.step();
        }
    }

    pub fn run_for(&mut self, d: Duration) {
        let end = self.now() + d;
        while self.now() < end {
            self.step();
        }
    }

    pub fn command(&mut self, command: Command) {
        self.stages
            .gateway
            .commands
            .push(AcqCommand {
                client: Some(CLIENT),
                command,
            })
            .unwrap();
    }

    pub fn request(&mut self, req: Request) {
        self.stages.gateway.requests.push(req).unwrap();
    }

    pub fn status(&self) -> Status {
        self.stages.processing.status()
    }

    pub fn state(&self) -> DaemonState {
        self.stages.acquisition.state()
    }

    /// Finish the start-up handshake.
    pub fn settle(&mut self) {
        self.run_until(Duration::from_secs(5), |r| !r.stages.acquisition.is_handshaking());
    }

    pub fn replies(&mut self) -> Vec<ServerMessage> {
        let mut out = Vec::new();
        self.outbound.retain(|o| match o {
            Outbound::To { client: CLIENT, msg } => {
                out.push(msg.clone());
                false
            }
            _ => true,
        });
        out
    }

    pub fn take_data(&mut self, stream: StreamKind) -> Vec<(u64, Vec<Vec<f64>>)> {
        let mut out = Vec::new();
        self.outbound.retain(|o| match o {
            Outbound::Broadcast(ServerMessage::Data {
                stream: s,
                first_index,
                frames,
                ..
            }) if *s == stream => {
                out.push((*first_index, frames.clone()));
                false
            }
            _ => true,
        });
        out
    }
}

/// Blocking newline-delimited JSON client.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Self {
        let s = TcpStream::connect(addr).unwrap();
        s.set_nodelay(true).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Client {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    pub fn from_stream(s: TcpStream) -> Self {
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Client {
            reader: BufReader::new(s.try_clone().unwrap()),
            writer: s,
        }
    }

    pub fn send(&mut self, msg: &ClientMessage) {
        let mut line = serde_json::to_string(msg).unwrap();
        line.push('\n');
        self.writer.write_all(line.as_bytes()).unwrap();
    }

    pub fn send_raw(&mut self, line: &str) {
        self.writer.write_all(line.as_bytes()).unwrap();
    }

    /// Next message, or `None` once the daemon closed the connection.
    pub fn recv(&mut self) -> Option<ServerMessage> {
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => None,
            Ok(_) => Some(serde_json::from_str(&line).unwrap_or_else(|e| panic!("bad line {line:?}: {e}"))),
            Err(e) if e.kind() == std::io::ErrorKind::ConnectionReset => None,
            Err(e) => panic!("read failed: {e}"),
        }
    }

    pub fn recv_until(&mut self, timeout: Duration, mut pred: impl FnMut(&ServerMessage) -> bool) -> ServerMessage {
        let end = Instant::now() + timeout;
        loop {
            assert!(Instant::now() < end, "expected message not received within {timeout:?}");
            let m = self.recv().expect("connection closed early");
            if pred(&m) {
                return m;
            }
        }
    }

    /// Send a command and wait for the daemon to report `expect`, or an error.
    pub fn command(&mut self, command: Command, expect: DaemonState) -> ServerMessage {
        self.send(&ClientMessage::Command { command });
        self.recv_until(Duration::from_secs(10), |m| match m {
            ServerMessage::Error { .. } => true,
            ServerMessage::Status(s) => s.state == expect,
            _ => false,
        })
    }

    pub fn hello(&mut self) -> ServerMessage {
        self.send(&ClientMessage::Hello { client: None });
        self.recv_until(Duration::from_secs(10), |m| matches!(m, ServerMessage::Welcome { .. }))
    }

    pub fn subscribe(&mut self, stream: StreamKind) {
        self.send(&ClientMessage::Subscribe { stream, channels: None });
    }

    /// Gather `n` consecutive frames of `stream`, starting with the next
    /// batch whose first index is at least `from`.
    pub fn collect(&mut self, stream: StreamKind, from: u64, n: usize, timeout: Duration) -> (u64, Vec<Vec<f64>>) {
        let end = Instant::now() + timeout;
        let mut start = None;
        let mut frames: Vec<Vec<f64>> = Vec::new();
        while frames.len() < n {
            assert!(Instant::now() < end, "only {} of {n} frames within {timeout:?}", frames.len());
            let Some(m) = self.recv() else { panic!("connection closed") };
            if let ServerMessage::Data {
                stream: s,
                first_index,
                frames: f,
                ..
            } = m
            {
                if s != stream || first_index < from {
                    continue;
                }
                match start {
                    None => start = Some(first_index),
                    Some(s0) => assert_eq!(first_index, s0 + frames.len() as u64, "index gap in {stream:?}"),
                }
                frames.extend(f);
            }
        }
        frames.truncate(n);
        (start.unwrap(), frames)
    }
}

/// Daemon on ephemeral ports with an in-process simulator.
pub fn start_daemon(mut cfg: DaemonConfig, sim: SimConfig, clock: Arc<dyn Clock>) -> (Daemon, SimHandle) {
    cfg.gateway.tcp_port = 0;
    cfg.gateway.ws_port = 0;
    cfg.stream.daisy = sim.daisy;
    cfg.stream.n_channels = if sim.daisy { 16 } else { 8 };
    cfg.sim = sim.clone();
    let connector = SimConnector::new(sim, clock.clone()).unwrap();
    let handle = connector.handle();
    let daemon = Daemon::start(&cfg, Box::new(connector), clock).unwrap();
    (daemon, handle)
}

pub fn channel(frames: &[Vec<f64>], ch: usize) -> Vec<f64> {
    frames.iter().map(|f| f[ch]).collect()
}
