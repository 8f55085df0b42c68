//! From decoded packets to a continuous, indexed multichannel sample stream.
//!
//! Lost packets are detected from the 1-byte sample counter. Short gaps are
//! filled by linear interpolation between the real neighbours; longer ones
//! become explicit dropouts and the sample index jumps over them so that the
//! index keeps tracking device time.

mod daisy;
mod ring;

pub use daisy::{merge_daisy, DaisyMerger, DaisySample};
pub use ring::{RangeUnavailable, RingBuffer};

use crate::codec::{counts_to_microvolts, Gain, RawPacket, CHANNELS_PER_PACKET};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StreamConfigError {
    #[error("native rate must be positive, got {0}")]
    Rate(f64),
    #[error("{channels} channels is inconsistent with daisy={daisy} (expected {expected})")]
    Channels {
        channels: usize,
        daisy: bool,
        expected: usize,
    },
    #[error("history must be positive, got {0} s")]
    History(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StreamConfig {
    pub native_rate: f64,
    pub n_channels: usize,
    pub gain: Gain,
    pub daisy: bool,
    pub max_interp_gap: usize,
    pub history_seconds: f64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            native_rate: 250.0,
            n_channels: 8,
            gain: Gain::DEFAULT,
            daisy: false,
            max_interp_gap: 50,
            history_seconds: 10.0,
        }
    }
}

impl StreamConfig {
    /// Cyton + Daisy: 16 channels at half the packet rate.
    pub fn daisy() -> Self {
        StreamConfig {
            n_channels: 16,
            daisy: true,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), StreamConfigError> {
        if !(self.native_rate > 0.0) {
            return Err(StreamConfigError::Rate(self.native_rate));
        }
        let expected = if self.daisy { 16 } else { 8 };
        if self.n_channels != expected {
            return Err(StreamConfigError::Channels {
                channels: self.n_channels,
                daisy: self.daisy,
                expected,
            });
        }
        if !(self.history_seconds > 0.0) {
            return Err(StreamConfigError::History(self.history_seconds));
        }
        Ok(())
    }

    /// Rate of emitted sample frames.
    pub fn effective_rate(&self) -> f64 {
        if self.daisy {
            self.native_rate / 2.0
        } else {
            self.native_rate
        }
    }

    pub fn history_capacity(&self) -> usize {
        (self.history_seconds * self.effective_rate()).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleFrame {
    pub index: u64,
    pub values: Vec<f64>,
    pub interpolated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapAction {
    Interpolated,
    Dropout,
}

/// Which channels of the reported frames had no real data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapChannels {
    All,
    /// Daisy channels 1-8 (main board).
    LowerBoard,
    /// Daisy channels 9-16.
    UpperBoard,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapReport {
    pub start_index: u64,
    pub missing: u64,
    pub action: GapAction,
    pub channels: GapChannels,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamReport {
    Gap(GapReport),
    /// A packet repeated the previous counter and was dropped.
    Duplicate { seq: u8 },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReconcileStats {
    pub packets: u64,
    pub frames: u64,
    pub gaps_interpolated: u64,
    pub interpolated_frames: u64,
    pub dropouts: u64,
    pub dropped_frames: u64,
    pub duplicates: u64,
}

/// Missing packets between two counters, modulo 256.
///
/// Equal counters are a duplicate or a stalled board; that case yields
/// `None` and the caller drops the packet.
pub fn sequence_gap(prev: u8, next: u8) -> Option<u8> {
    if prev == next {
        None
    } else {
        Some(next.wrapping_sub(prev).wrapping_sub(1))
    }
}

fn lerp(a: f64, b: f64, j: usize, k: usize) -> f64 {
    a + (b - a) * j as f64 / (k + 1) as f64
}

/// The `k` frames on the straight line strictly between `a` and `b`.
pub fn interpolate_gap(a: &SampleFrame, b: &SampleFrame, k: usize) -> Vec<SampleFrame> {
    debug_assert_eq!(a.index + k as u64 + 1, b.index);
    (1..=k)
        .map(|j| SampleFrame {
            index: a.index + j as u64,
            values: a
                .values
                .iter()
                .zip(&b.values)
                .map(|(&x, &y)| lerp(x, y, j, k))
                .collect(),
            interpolated: true,
        })
        .collect()
}

/// A board sample that may be missing some or all of its channels.
#[derive(Debug, Clone)]
struct Slot {
    values: Vec<f64>,
    known: Known,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Known {
    All,
    Nothing,
    Lower,
    Upper,
}

impl Known {
    fn has(self, ch: usize) -> bool {
        match self {
            Known::All => true,
            Known::Nothing => false,
            Known::Lower => ch < CHANNELS_PER_PACKET,
            Known::Upper => ch >= CHANNELS_PER_PACKET,
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Reconciled {
    pub frames: Vec<SampleFrame>,
    pub reports: Vec<StreamReport>,
}

/// Stateful gap detector and repairer. Owns the master sample index.
#[derive(Debug, Clone)]
pub struct Reconciler {
    cfg: StreamConfig,
    merger: Option<DaisyMerger>,
    last_seq: Option<u8>,
    next_index: u64,
    left: Option<SampleFrame>,
    pending: Vec<Slot>,
    stats: ReconcileStats,
}

impl Reconciler {
    pub fn new(cfg: StreamConfig) -> Result<Self, StreamConfigError> {
        cfg.validate()?;
        Ok(Reconciler {
            merger: cfg.daisy.then(DaisyMerger::new),
            cfg,
            last_seq: None,
            next_index: 0,
            left: None,
            pending: Vec::new(),
            stats: ReconcileStats::default(),
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.cfg
    }

    pub fn stats(&self) -> ReconcileStats {
        self.stats
    }

    /// Index the next emitted frame will carry.
    pub fn next_index(&self) -> u64 {
        self.next_index
    }

    /// Forget counter continuity, e.g. after the board was restarted. The
    /// master index keeps counting from where it was.
    pub fn new_segment(&mut self) {
        self.last_seq = None;
        self.left = None;
        self.pending.clear();
        if let Some(m) = self.merger.as_mut() {
            m.reset();
        }
    }

    pub fn push_packets(&mut self, packets: &[RawPacket]) -> Reconciled {
        let mut out = Reconciled::default();
        for p in packets {
            self.push(p, &mut out);
        }
        out
    }

    pub fn push(&mut self, packet: &RawPacket, out: &mut Reconciled) {
        self.stats.packets += 1;
        let gain = self.cfg.gain;
        match self.merger.as_mut() {
            None => {
                let values = packet
                    .channels
                    .iter()
                    .map(|&c| counts_to_microvolts(c, gain))
                    .collect();
                self.push_slot(
                    packet.seq,
                    256,
                    Slot {
                        values,
                        known: Known::All,
                    },
                    out,
                );
            }
            Some(merger) => {
                let mut samples = Vec::with_capacity(2);
                merger.push(packet, &mut samples);
                for s in samples {
                    let slot = daisy_slot(&s, gain);
                    self.push_slot(s.pair_seq, 128, slot, out);
                }
            }
        }
    }

    fn push_slot(&mut self, seq: u8, modulus: u16, slot: Slot, out: &mut Reconciled) {
        let Some(prev) = self.last_seq else {
            self.last_seq = Some(seq);
            if slot.known == Known::All {
                self.emit_real(slot.values, out);
            } else {
                // half a daisy pair with nothing on its left to interpolate from
                self.dropout(1, gap_channels(&[slot]), out);
            }
            return;
        };
        if seq == prev {
            self.stats.duplicates += 1;
            out.reports.push(StreamReport::Duplicate { seq });
            return;
        }
        let gap = (seq as u16 + modulus - prev as u16 - 1) % modulus;
        self.last_seq = Some(seq);
        for _ in 0..gap {
            self.pending.push(Slot {
                values: vec![0.0; self.cfg.n_channels],
                known: Known::Nothing,
            });
        }
        if slot.known == Known::All {
            self.resolve_pending(&slot.values, out);
            self.emit_real(slot.values, out);
        } else {
            self.pending.push(slot);
            if self.pending.len() > self.cfg.max_interp_gap {
                let pending = std::mem::take(&mut self.pending);
                self.left = None;
                self.dropout(pending.len() as u64, gap_channels(&pending), out);
            }
        }
    }

    fn resolve_pending(&mut self, right: &[f64], out: &mut Reconciled) {
        if self.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.pending);
        let k = pending.len();
        let channels = gap_channels(&pending);
        let left = match &self.left {
            Some(left) if k <= self.cfg.max_interp_gap => left.values.clone(),
            _ => {
                self.dropout(k as u64, channels, out);
                return;
            }
        };
        let start_index = self.next_index;
        for (j, slot) in pending.into_iter().enumerate() {
            let values = slot
                .values
                .iter()
                .enumerate()
                .map(|(ch, &v)| {
                    if slot.known.has(ch) {
                        v
                    } else {
                        lerp(left[ch], right[ch], j + 1, k)
                    }
                })
                .collect();
            out.frames.push(SampleFrame {
                index: self.next_index,
                values,
                interpolated: true,
            });
            self.next_index += 1;
        }
        self.stats.frames += k as u64;
        self.stats.gaps_interpolated += 1;
        self.stats.interpolated_frames += k as u64;
        out.reports.push(StreamReport::Gap(GapReport {
            start_index,
            missing: k as u64,
            action: GapAction::Interpolated,
            channels,
        }));
    }

    fn dropout(&mut self, missing: u64, channels: GapChannels, out: &mut Reconciled) {
        out.reports.push(StreamReport::Gap(GapReport {
            start_index: self.next_index,
            missing,
            action: GapAction::Dropout,
            channels,
        }));
        self.next_index += missing;
        self.stats.dropouts += 1;
        self.stats.dropped_frames += missing;
    }

    fn emit_real(&mut self, values: Vec<f64>, out: &mut Reconciled) {
        let frame = SampleFrame {
            index: self.next_index,
            values,
            interpolated: false,
        };
        self.next_index += 1;
        self.stats.frames += 1;
        self.left = Some(frame.clone());
        out.frames.push(frame);
    }
}

fn gap_channels(slots: &[Slot]) -> GapChannels {
    let mut lower_missing = false;
    let mut upper_missing = false;
    for s in slots {
        match s.known {
            Known::All => {}
            Known::Nothing => return GapChannels::All,
            Known::Lower => upper_missing = true,
            Known::Upper => lower_missing = true,
        }
    }
    match (lower_missing, upper_missing) {
        (true, false) => GapChannels::LowerBoard,
        (false, true) => GapChannels::UpperBoard,
        _ => GapChannels::All,
    }
}

fn daisy_slot(s: &DaisySample, gain: Gain) -> Slot {
    let mut values = vec![0.0; 2 * CHANNELS_PER_PACKET];
    if let Some(lower) = &s.lower {
        for (v, &c) in values[..CHANNELS_PER_PACKET].iter_mut().zip(lower) {
            *v = counts_to_microvolts(c, gain);
        }
    }
    if let Some(upper) = &s.upper {
        for (v, &c) in values[CHANNELS_PER_PACKET..].iter_mut().zip(upper) {
            *v = counts_to_microvolts(c, gain);
        }
    }
    let known = match (s.lower.is_some(), s.upper.is_some()) {
        (true, true) => Known::All,
        (true, false) => Known::Lower,
        (false, true) => Known::Upper,
        (false, false) => Known::Nothing,
    };
    Slot { values, known }
}

/// One-shot form of [`Reconciler::push_packets`].
pub fn reconcile(packets: &[RawPacket], state: &mut Reconciler) -> (Vec<SampleFrame>, Vec<StreamReport>) {
    let r = state.push_packets(packets);
    (r.frames, r.reports)
}
