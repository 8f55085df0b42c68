//! Items carried by the queues between stages.

use crate::lifecycle::{Command, DaemonState, StateError};
use crate::protocol::{ServerMessage, StreamKind};
use cyton_core::codec::RawPacket;
use cyton_core::dsp::{Epoch, EpochWindow};
use std::time::Duration;

pub type ClientId = u64;

/// Gateway to acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AcqCommand {
    pub client: Option<ClientId>,
    pub command: Command,
}

/// Acquisition to processing.
#[derive(Debug, Clone)]
pub enum AcqEvent {
    /// A streaming segment produced its first frame at `at`.
    SegmentStart { at: Duration },
    Packets {
        packets: Vec<RawPacket>,
        received: Duration,
        discarded_bytes: u64,
    },
    State { state: DaemonState, reconnects: u64 },
    CommandResult {
        client: Option<ClientId>,
        result: Result<DaemonState, StateError>,
    },
}

/// Gateway to processing.
#[derive(Debug, Clone)]
pub enum Request {
    Tag {
        client: ClientId,
        label: String,
        client_time: f64,
        received: Duration,
    },
    Epoch {
        client: ClientId,
        tag_id: u64,
        window: EpochWindow,
        stream: StreamKind,
    },
    BandPower {
        client: ClientId,
        band: (f64, f64),
        window_s: f64,
        stream: StreamKind,
    },
    Average {
        client: ClientId,
        label: String,
        window: EpochWindow,
        stream: StreamKind,
    },
    /// Ask for a fresh status to be sent to one client.
    Status { client: ClientId },
}

/// Processing or worker to gateway.
#[derive(Debug, Clone)]
pub enum Outbound {
    Broadcast(ServerMessage),
    To { client: ClientId, msg: ServerMessage },
}

/// Processing to worker.
#[derive(Debug, Clone)]
pub enum Job {
    BandPower {
        client: ClientId,
        band: (f64, f64),
        window_s: f64,
        stream: StreamKind,
        rate: f64,
        /// `data[channel][sample]`
        data: Vec<Vec<f64>>,
    },
    Average {
        client: ClientId,
        label: String,
        stream: StreamKind,
        epochs: Vec<Epoch>,
    },
}
