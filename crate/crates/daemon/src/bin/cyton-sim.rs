//! Serve the simulated board on a pseudo-terminal so that the daemon's
//! serial adapter can be pointed at it unmodified.

use clap::Parser;
use cyton_core::clock::SystemClock;
use cyton_core::sim::{run, SimConfig, Simulator};
use cyton_daemon::serial::open_pty;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

/// Simulated Cyton board on a pseudo-terminal.
#[derive(Debug, Parser)]
#[command(version)]
struct Cli {
    /// JSON simulator configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    daisy: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Probability that a packet is lost.
    #[arg(long)]
    loss: Option<f64>,
    /// Also create this symlink to the terminal.
    #[arg(long)]
    link: Option<PathBuf>,
}

static STOP: AtomicBool = AtomicBool::new(false);

extern "C" fn on_signal(_: libc::c_int) {
    STOP.store(true, Ordering::SeqCst);
}

fn load(cli: &Cli) -> Result<SimConfig, String> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => SimConfig::default(),
    };
    if cli.daisy {
        cfg.daisy = true;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(l) = cli.loss {
        cfg.loss_prob = l;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut sim = match load(&cli).and_then(|c| Simulator::new(c).map_err(|e| e.to_string())) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cyton-sim: {e}");
            return ExitCode::from(1);
        }
    };
    let mut pty = match open_pty() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("cyton-sim: cannot open a pseudo-terminal: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(link) = &cli.link {
        let _ = std::fs::remove_file(link);
        if let Err(e) = std::os::unix::fs::symlink(&pty.slave_path, link) {
            eprintln!("cyton-sim: cannot link {}: {e}", link.display());
            return ExitCode::from(1);
        }
    }
    println!("{}", pty.slave_path.display());
    // SAFETY: the handler only stores to an atomic.
    unsafe {
        libc::signal(libc::SIGINT, on_signal as *const () as libc::sighandler_t);
        libc::signal(libc::SIGTERM, on_signal as *const () as libc::sighandler_t);
    }
    let clock = SystemClock::new();
    let result = run(&mut sim, &mut pty.master, &clock, &STOP);
    if let Some(link) = &cli.link {
        let _ = std::fs::remove_file(link);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cyton-sim: {e}");
            ExitCode::from(2)
        }
    }
}
