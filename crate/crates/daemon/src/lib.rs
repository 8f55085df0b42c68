//! Cyton acquisition daemon.
//!
//! Four long-lived stages joined by single-producer single-consumer queues:
//!
//! ```text
//!  board ─▶ acquisition ─▶ processing ─▶ gateway ─▶ clients (TCP / WebSocket)
//!               ▲              │  ▲          │
//!               │              ▼  │          │
//!               │            worker ─────────┤
//!               └────────── commands ────────┘
//! ```

pub mod acquisition;
pub mod config;
pub mod gateway;
pub mod lifecycle;
pub mod messages;
pub mod processing;
pub mod protocol;
pub mod serial;
pub mod tags;
pub mod worker;

use acquisition::{Acquisition, AcquisitionConfig};
use config::{ConfigError, DaemonConfig};
use cyton_core::clock::Clock;
use cyton_core::spsc;
use cyton_core::transport::{Connector, Transport, TransportError};
use gateway::{GatewayQueues, GatewaySettings};
use processing::{Processing, ProcessingConfig};
use protocol::{WelcomeConfig, PROTOCOL_VERSION};
use std::net::{SocketAddr, TcpListener};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;
use thiserror::Error;
use worker::Worker;

pub const ACQ_QUEUE: usize = 1024;
pub const GATEWAY_QUEUE: usize = 1024;
pub const COMMAND_QUEUE: usize = 64;
pub const JOB_QUEUE: usize = 64;

#[derive(Debug, Error)]
pub enum StartError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("cannot open {what}: {source}")]
    Transport { what: String, source: TransportError },
}

impl StartError {
    /// Process exit status for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            StartError::Config(_) | StartError::Bind { .. } => 1,
            StartError::Transport { .. } => 2,
        }
    }
}

/// The four stages, wired together but not yet running. Tests drive them by
/// hand; [`Daemon::start`] gives each its own thread.
pub struct Stages {
    pub acquisition: Acquisition,
    pub processing: Processing,
    pub worker: Worker,
    pub gateway: GatewayQueues,
}

impl Stages {
    pub fn new(
        cfg: &DaemonConfig,
        connector: Box<dyn Connector>,
        link: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ConfigError> {
        cfg.validate()?;
        let (cmd_tx, cmd_rx) = spsc::channel(COMMAND_QUEUE);
        let (acq_tx, acq_rx) = spsc::channel(ACQ_QUEUE);
        let (req_tx, req_rx) = spsc::channel(GATEWAY_QUEUE);
        let (out_tx, out_rx) = spsc::channel(GATEWAY_QUEUE);
        let (job_tx, job_rx) = spsc::channel(JOB_QUEUE);
        let (done_tx, done_rx) = spsc::channel(JOB_QUEUE);
        let processing = Processing::new(processing_config(cfg), clock.clone(), acq_rx, req_rx, out_tx, job_tx)?;
        let acq_cfg = AcquisitionConfig {
            stall_timeout: Duration::from_secs_f64(cfg.stall_timeout_s),
            ..AcquisitionConfig::default()
        };
        Ok(Stages {
            acquisition: Acquisition::new(acq_cfg, connector, link, clock, cmd_rx, acq_tx),
            processing,
            worker: Worker::new(job_rx, done_tx),
            gateway: GatewayQueues {
                commands: cmd_tx,
                requests: req_tx,
                from_processing: out_rx,
                from_worker: done_rx,
            },
        })
    }
}

pub fn processing_config(cfg: &DaemonConfig) -> ProcessingConfig {
    ProcessingConfig {
        stream: cfg.stream.clone(),
        filter: cfg.filter.clone(),
        resample: cfg.resample,
        batch_frames: cfg.gateway.batch_frames,
        latency_compensation_ms: cfg.latency_compensation_ms,
        ..ProcessingConfig::default()
    }
}

pub fn welcome_config(cfg: &DaemonConfig) -> WelcomeConfig {
    WelcomeConfig {
        version: PROTOCOL_VERSION,
        native_rate: cfg.stream.native_rate,
        effective_rate: cfg.stream.effective_rate(),
        n_channels: cfg.stream.n_channels,
        daisy: cfg.stream.daisy,
        resample: cfg.resample,
        resampled_rate: cfg.resampled_rate(),
        batch_frames: cfg.gateway.batch_frames,
        latency_compensation_ms: cfg.latency_compensation_ms,
        filter: cfg.filter.clone(),
    }
}

/// A running daemon. Dropping it shuts everything down.
pub struct Daemon {
    tcp_addr: SocketAddr,
    ws_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

fn bind(host: &str, port: u16) -> Result<TcpListener, StartError> {
    let addr = format!("{host}:{port}");
    TcpListener::bind(&addr).map_err(|source| StartError::Bind { addr, source })
}

impl Daemon {
    /// Bind both ports, open the transport and start every stage.
    pub fn start(cfg: &DaemonConfig, mut connector: Box<dyn Connector>, clock: Arc<dyn Clock>) -> Result<Self, StartError> {
        cfg.validate()?;
        let tcp = bind(&cfg.gateway.bind, cfg.gateway.tcp_port)?;
        let ws = bind(&cfg.gateway.bind, cfg.gateway.ws_port)?;
        let local = |l: &TcpListener| l.local_addr().expect("bound listener has an address");
        let (tcp_addr, ws_addr) = (local(&tcp), local(&ws));
        let link = connector.connect().map_err(|source| StartError::Transport {
            what: connector.describe(),
            source,
        })?;
        let Stages {
            mut acquisition,
            mut processing,
            mut worker,
            gateway,
        } = Stages::new(cfg, connector, link, clock.clone())?;

        let stop = Arc::new(AtomicBool::new(false));
        let mut threads = Vec::new();
        let spawn = |name: &str, f: Box<dyn FnOnce() + Send>| {
            std::thread::Builder::new()
                .name(name.into())
                .spawn(f)
                .expect("thread spawn")
        };
        let s = stop.clone();
        threads.push(spawn(
            "acquisition",
            Box::new(move || {
                while !s.load(Ordering::Relaxed) {
                    acquisition.step();
                }
            }),
        ));
        let s = stop.clone();
        threads.push(spawn(
            "processing",
            Box::new(move || {
                while !s.load(Ordering::Relaxed) {
                    if !processing.step() {
                        std::thread::sleep(Duration::from_micros(500));
                    }
                }
            }),
        ));
        let s = stop.clone();
        threads.push(spawn(
            "worker",
            Box::new(move || {
                while !s.load(Ordering::Relaxed) {
                    if !worker.step() {
                        std::thread::sleep(Duration::from_millis(2));
                    }
                }
            }),
        ));
        let s = stop.clone();
        let settings = GatewaySettings {
            welcome: welcome_config(cfg),
            max_queue_seconds: cfg.gateway.max_queue_seconds,
        };
        threads.push(spawn(
            "gateway",
            Box::new(move || {
                if let Err(e) = gateway::run(tcp, ws, settings, gateway, clock, s.clone()) {
                    log::error!("gateway failed: {e}");
                    s.store(true, Ordering::Relaxed);
                }
            }),
        ));
        log::info!("listening on tcp {tcp_addr} and websocket {ws_addr}");
        Ok(Daemon {
            tcp_addr,
            ws_addr,
            stop,
            threads,
        })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp_addr
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws_addr
    }

    /// Whether a stage has stopped on its own (only the gateway can).
    pub fn has_failed(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Daemon {
    fn drop(&mut self) {
        self.stop_threads();
    }
}
