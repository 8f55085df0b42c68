use clap::{Parser, ValueEnum};
use cyton_core::clock::{Clock, SystemClock};
use cyton_core::dsp::MainsNotch;
use cyton_core::sim::SimConnector;
use cyton_core::transport::Connector;
use cyton_daemon::config::{ConfigError, DaemonConfig, TransportSpec};
use cyton_daemon::serial::SerialConnector;
use cyton_daemon::Daemon;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

/// Headless EEG acquisition daemon for the OpenBCI Cyton board.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// `sim` or `serial:<device-path>`
    #[arg(long)]
    transport: Option<TransportSpec>,
    #[arg(long)]
    tcp_port: Option<u16>,
    #[arg(long)]
    ws_port: Option<u16>,
    /// Address both listeners bind to.
    #[arg(long)]
    bind: Option<String>,
    /// JSON configuration file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cyton + Daisy, 16 channels at 125 Hz.
    #[arg(long)]
    daisy: bool,
    /// Mains notch: 50, 60 or off.
    #[arg(long)]
    notch: Option<MainsNotch>,
    #[arg(long)]
    resample: Option<OnOff>,
    /// error, warn, info, debug or trace
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

static SIGNALLED: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    SIGNALLED.store(true, Ordering::SeqCst);
}

fn build_config(cli: &Cli) -> Result<DaemonConfig, ConfigError> {
    let mut cfg = match &cli.config {
        Some(path) => DaemonConfig::load(path)?,
        None => DaemonConfig::default(),
    };
    if let Some(t) = &cli.transport {
        cfg.transport = t.clone();
    }
    if let Some(p) = cli.tcp_port {
        cfg.gateway.tcp_port = p;
    }
    if let Some(p) = cli.ws_port {
        cfg.gateway.ws_port = p;
    }
    if let Some(b) = &cli.bind {
        cfg.gateway.bind = b.clone();
    }
    if cli.daisy {
        cfg.set_daisy(true);
    }
    if let Some(n) = cli.notch {
        cfg.filter.notch = n;
    }
    if let Some(r) = cli.resample {
        cfg.resample = matches!(r, OnOff::On);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();

    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(1);
        }
    };
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let connector: Box<dyn Connector> = match &cfg.transport {
        TransportSpec::Sim => match SimConnector::new(cfg.sim.clone(), clock.clone()) {
            Ok(c) => Box::new(c),
            Err(e) => {
                log::error!("{e}");
                return ExitCode::from(1);
            }
        },
        TransportSpec::Serial(path) => Box::new(SerialConnector::new(path)),
    };

    let daemon = match Daemon::start(&cfg, connector, clock) {
        Ok(d) => d,
        Err(e) => {
            log::error!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    // SAFETY: the handler only stores to an atomic.
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    while !SIGNALLED.load(Ordering::SeqCst) && !daemon.has_failed() {
        std::thread::sleep(Duration::from_millis(100));
    }
    let failed = daemon.has_failed() && !SIGNALLED.load(Ordering::SeqCst);
    log::info!("shutting down");
    daemon.shutdown();
    if failed {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}
