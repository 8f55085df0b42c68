//! Daemon configuration: a JSON file, overridden by command-line flags.

use cyton_core::dsp::FilterSpec;
use cyton_core::sim::SimConfig;
use cyton_core::stream::StreamConfig;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const DEFAULT_TCP_PORT: u16 = 8336;
pub const DEFAULT_WS_PORT: u16 = 8337;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid stream settings: {0}")]
    Stream(#[from] cyton_core::stream::StreamConfigError),
    #[error("invalid filter settings: {0}")]
    Filter(#[from] cyton_core::dsp::DspError),
    #[error("invalid simulator settings: {0}")]
    Sim(#[from] cyton_core::sim::SimError),
    #[error("invalid transport {0:?}: expected `sim` or `serial:<device-path>`")]
    Transport(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportSpec {
    Sim,
    Serial(PathBuf),
}

impl std::str::FromStr for TransportSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            None if s == "sim" => Ok(TransportSpec::Sim),
            Some(("serial", path)) if !path.is_empty() => Ok(TransportSpec::Serial(path.into())),
            _ => Err(ConfigError::Transport(s.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub bind: String,
    pub tcp_port: u16,
    pub ws_port: u16,
    pub batch_frames: usize,
    /// Seconds of queued data after which a client is evicted.
    pub max_queue_seconds: f64,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            bind: "127.0.0.1".into(),
            tcp_port: DEFAULT_TCP_PORT,
            ws_port: DEFAULT_WS_PORT,
            batch_frames: 25,
            max_queue_seconds: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DaemonConfig {
    pub transport: TransportSpec,
    pub stream: StreamConfig,
    pub filter: FilterSpec,
    pub resample: bool,
    pub gateway: GatewayConfig,
    pub latency_compensation_ms: f64,
    /// Seconds without a byte while streaming before the link is declared
    /// dead.
    pub stall_timeout_s: f64,
    pub sim: SimConfig,
}

impl Default for DaemonConfig {
    fn default() -> Self {
        DaemonConfig {
            transport: TransportSpec::Sim,
            stream: StreamConfig::default(),
            filter: FilterSpec::default(),
            resample: true,
            gateway: GatewayConfig::default(),
            latency_compensation_ms: 0.0,
            stall_timeout_s: 3.0,
            sim: SimConfig::default(),
        }
    }
}

impl DaemonConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    /// Switch stream and simulator to Daisy (16 channels at half rate).
    pub fn set_daisy(&mut self, daisy: bool) {
        self.stream.daisy = daisy;
        self.stream.n_channels = if daisy { 16 } else { 8 };
        self.sim.daisy = daisy;
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.stream.validate()?;
        self.filter.validate(self.stream.effective_rate())?;
        if self.transport == TransportSpec::Sim {
            self.sim.validate()?;
            if self.sim.daisy != self.stream.daisy {
                return Err(ConfigError::Invalid("simulator and stream disagree on daisy".into()));
            }
        }
        if self.gateway.batch_frames == 0 {
            return Err(ConfigError::Invalid("batch_frames must be positive".into()));
        }
        if !(self.gateway.max_queue_seconds > 0.0) {
            return Err(ConfigError::Invalid("max_queue_seconds must be positive".into()));
        }
        if !(self.stall_timeout_s > 0.0) {
            return Err(ConfigError::Invalid("stall_timeout_s must be positive".into()));
        }
        if !self.latency_compensation_ms.is_finite() || self.latency_compensation_ms < 0.0 {
            return Err(ConfigError::Invalid("latency_compensation_ms must be non-negative".into()));
        }
        Ok(())
    }

    pub fn resampled_rate(&self) -> f64 {
        use cyton_core::dsp::Resampler;
        self.stream.effective_rate() * Resampler::RATIO_UP as f64 / Resampler::RATIO_DOWN as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use cyton_core::dsp::MainsNotch;

    #[test]
    fn defaults_are_valid_and_use_documented_ports() {
        let c = DaemonConfig::default();
        c.validate().unwrap();
        assert_eq!((c.gateway.tcp_port, c.gateway.ws_port), (8336, 8337));
        assert_eq!(c.gateway.batch_frames, 25);
        assert_eq!(c.filter.notch, MainsNotch::Hz60);
        assert_eq!(c.resampled_rate(), 256.0);
    }

    #[test]
    fn partial_file_fills_in_defaults() {
        let c: DaemonConfig = serde_json::from_str(
            r#"{"filter": {"notch": 50}, "gateway": {"tcp_port": 9000}, "transport": {"serial": "/dev/ttyUSB0"}}"#,
        )
        .unwrap();
        assert_eq!(c.filter.notch, MainsNotch::Hz50);
        assert_eq!(c.filter.bandpass_high, 50.0);
        assert_eq!(c.gateway.tcp_port, 9000);
        assert_eq!(c.gateway.ws_port, 8337);
        assert_eq!(c.transport, TransportSpec::Serial("/dev/ttyUSB0".into()));
    }

    #[test]
    fn transport_flag_forms() {
        assert_eq!("sim".parse::<TransportSpec>().unwrap(), TransportSpec::Sim);
        assert_eq!(
            "serial:/dev/pts/3".parse::<TransportSpec>().unwrap(),
            TransportSpec::Serial("/dev/pts/3".into())
        );
        for bad in ["serial:", "usb", "sim:x", ""] {
            assert!(bad.parse::<TransportSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn daisy_switch_keeps_everything_consistent() {
        let mut c = DaemonConfig::default();
        c.set_daisy(true);
        c.validate().unwrap();
        assert_eq!(c.stream.effective_rate(), 125.0);
        c.sim.daisy = false;
        assert!(c.validate().is_err());
    }
}
