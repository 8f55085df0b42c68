//! Wire vocabulary. Every message is one JSON object with a `type` field;
//! over TCP each is terminated by a newline, over WebSocket each is one text
//! frame.

use crate::lifecycle::{Command, DaemonState};
use cyton_core::dsp::{EpochWindow, FilterSpec};
use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Raw,
    Filtered,
    Resampled,
}

impl StreamKind {
    pub const ALL: [StreamKind; 3] = [StreamKind::Raw, StreamKind::Filtered, StreamKind::Resampled];
}

fn default_stream() -> StreamKind {
    StreamKind::Filtered
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client: Option<String>,
    },
    Command {
        command: Command,
    },
    Subscribe {
        stream: StreamKind,
        /// Zero-based channel indices; all channels when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channels: Option<Vec<usize>>,
    },
    Unsubscribe {
        stream: StreamKind,
    },
    Tag {
        label: String,
        client_time: f64,
    },
    RequestEpoch {
        tag_id: u64,
        #[serde(default)]
        window: EpochWindow,
        #[serde(default = "default_stream")]
        stream: StreamKind,
    },
    RequestBandPower {
        band: (f64, f64),
        window_s: f64,
        #[serde(default = "default_stream")]
        stream: StreamKind,
    },
    /// Mean epoch over every resolved tag carrying `label`.
    RequestAverage {
        label: String,
        #[serde(default)]
        window: EpochWindow,
        #[serde(default = "default_stream")]
        stream: StreamKind,
    },
    Ping {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WelcomeConfig {
    pub version: u32,
    pub native_rate: f64,
    pub effective_rate: f64,
    pub n_channels: usize,
    pub daisy: bool,
    pub resample: bool,
    pub resampled_rate: f64,
    pub batch_frames: usize,
    pub latency_compensation_ms: f64,
    pub filter: FilterSpec,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Status {
    pub state: DaemonState,
    pub packets: u64,
    /// Packets per second over the last reporting interval.
    pub packet_rate: f64,
    pub gaps_interpolated: u64,
    pub interpolated_frames: u64,
    pub dropouts: u64,
    pub dropped_frames: u64,
    pub duplicates: u64,
    pub discarded_bytes: u64,
    pub reconnects: u64,
    pub next_index: u64,
    /// Daemon clock (s) at which the newest counted packet arrived.
    pub stats_time_s: f64,
    /// Messages toward the gateway lost to a full queue.
    pub dropped_messages: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Protocol,
    State,
    TagRejected,
    UnknownTag,
    Expired,
    InsufficientData,
    InvalidRequest,
    Overflow,
    Busy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Welcome {
        config: WelcomeConfig,
    },
    Status(Status),
    Data {
        stream: StreamKind,
        first_index: u64,
        frames: Vec<Vec<f64>>,
        /// Offsets into `frames` of interpolated frames.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        interpolated: Vec<u32>,
    },
    TagAck {
        tag_id: u64,
        label: String,
        client_time: f64,
        resolved_index: u64,
    },
    Epoch {
        tag_id: u64,
        stream: StreamKind,
        start_index: u64,
        rate: f64,
        /// `data[channel][sample]`
        data: Vec<Vec<f64>>,
    },
    BandPower {
        band: (f64, f64),
        window_s: f64,
        stream: StreamKind,
        /// One value (µV²) per channel.
        values: Vec<f64>,
    },
    Average {
        label: String,
        count: usize,
        stream: StreamKind,
        rate: f64,
        data: Vec<Vec<f64>>,
    },
    Error {
        code: ErrorCode,
        detail: String,
    },
    Pong {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        nonce: Option<u64>,
    },
}

impl ServerMessage {
    pub fn error(code: ErrorCode, detail: impl Into<String>) -> Self {
        ServerMessage::Error {
            code,
            detail: detail.into(),
        }
    }

    /// Number of sample frames carried, used for queue accounting.
    pub fn frame_count(&self) -> usize {
        match self {
            ServerMessage::Data { frames, .. } => frames.len(),
            _ => 0,
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages always serialize");
        s.push('\n');
        s
    }
}

#[derive(Debug, thiserror::Error)]
#[error("malformed message: {0}")]
pub struct ProtocolError(String);

pub fn parse_client(text: &str) -> Result<ClientMessage, ProtocolError> {
    serde_json::from_str(text.trim()).map_err(|e| ProtocolError(e.to_string()))
}
