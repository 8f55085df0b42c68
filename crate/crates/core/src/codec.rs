//! Cyton serial dialect: single-byte ASCII commands toward the board and
//! 33-byte binary frames back from it.
//!
//! Frame layout:
//!
//! ```text
//! 0      1      2..26              26..32     32
//! 0xA0 | seq | 8 x int24 (BE) | 6 aux   | 0xC0..=0xCF
//! ```
//!
//! The decoder is incremental. It accepts arbitrary chunking of the input
//! and never fails: bytes that cannot start a frame are counted and skipped.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FRAME_LEN: usize = 33;
pub const HEADER: u8 = 0xA0;
pub const STOP_BASE: u8 = 0xC0;
pub const CHANNELS_PER_PACKET: usize = 8;
pub const AUX_LEN: usize = 6;

pub const INT24_MIN: i32 = -(1 << 23);
pub const INT24_MAX: i32 = (1 << 23) - 1;

/// Reference voltage of the ADS1299 front end, in volts.
pub const VREF: f64 = 4.5;

/// Terminator of every ASCII reply the board sends (reset banner, daisy query).
pub const REPLY_TERMINATOR: &[u8] = b"$$$";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("channel {channel} count {value} outside the signed 24-bit range")]
    CountOutOfRange { channel: usize, value: i32 },
    #[error("footer nibble {0} does not fit in 4 bits")]
    FooterOutOfRange(u8),
    #[error("unsupported PGA gain {0} (expected 1, 2, 4, 6, 8, 12 or 24)")]
    InvalidGain(u32),
}

/// One framed board sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawPacket {
    pub seq: u8,
    pub channels: [i32; CHANNELS_PER_PACKET],
    pub aux: [u8; AUX_LEN],
    pub footer_nibble: u8,
}

impl RawPacket {
    pub fn new(seq: u8, channels: [i32; CHANNELS_PER_PACKET]) -> Self {
        RawPacket {
            seq,
            channels,
            aux: [0; AUX_LEN],
            footer_nibble: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DeviceCommand {
    StartStream,
    StopStream,
    SoftReset,
    QueryDaisy,
}

impl DeviceCommand {
    pub const ALL: [DeviceCommand; 4] = [
        DeviceCommand::StartStream,
        DeviceCommand::StopStream,
        DeviceCommand::SoftReset,
        DeviceCommand::QueryDaisy,
    ];

    pub const fn byte(self) -> u8 {
        match self {
            DeviceCommand::StartStream => b'b',
            DeviceCommand::StopStream => b's',
            DeviceCommand::SoftReset => b'v',
            DeviceCommand::QueryDaisy => b'c',
        }
    }

    pub const fn from_byte(byte: u8) -> Option<Self> {
        match byte {
            b'b' => Some(DeviceCommand::StartStream),
            b's' => Some(DeviceCommand::StopStream),
            b'v' => Some(DeviceCommand::SoftReset),
            b'c' => Some(DeviceCommand::QueryDaisy),
            _ => None,
        }
    }
}

pub fn encode_command(cmd: DeviceCommand) -> [u8; 1] {
    [cmd.byte()]
}

/// Programmable gain of the ADC front end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct Gain(u32);

impl Gain {
    pub const DEFAULT: Gain = Gain(24);

    pub fn new(gain: u32) -> Result<Self, CodecError> {
        match gain {
            1 | 2 | 4 | 6 | 8 | 12 | 24 => Ok(Gain(gain)),
            other => Err(CodecError::InvalidGain(other)),
        }
    }

    pub fn get(self) -> u32 {
        self.0
    }

    /// Microvolts per ADC count.
    pub fn lsb_microvolts(self) -> f64 {
        VREF / self.0 as f64 / INT24_MAX as f64 * 1e6
    }
}

impl Default for Gain {
    fn default() -> Self {
        Gain::DEFAULT
    }
}

impl TryFrom<u32> for Gain {
    type Error = CodecError;

    fn try_from(value: u32) -> Result<Self, Self::Error> {
        Gain::new(value)
    }
}

impl From<Gain> for u32 {
    fn from(g: Gain) -> u32 {
        g.0
    }
}

pub fn parse_int24_be(b: [u8; 3]) -> i32 {
    // Place the 24 bits in the top of an i32 and shift back arithmetically.
    i32::from_be_bytes([b[0], b[1], b[2], 0]) >> 8
}

pub fn write_int24_be(value: i32) -> [u8; 3] {
    let b = value.to_be_bytes();
    [b[1], b[2], b[3]]
}

pub fn counts_to_microvolts(count: i32, gain: Gain) -> f64 {
    count as f64 * gain.lsb_microvolts()
}

/// Inverse of [`counts_to_microvolts`], rounding to the nearest count and
/// saturating at the 24-bit limits.
pub fn microvolts_to_counts(microvolts: f64, gain: Gain) -> i32 {
    let counts = (microvolts / gain.lsb_microvolts()).round();
    if counts.is_nan() {
        0
    } else {
        counts.clamp(INT24_MIN as f64, INT24_MAX as f64) as i32
    }
}

pub fn encode_packet(p: &RawPacket) -> Result<[u8; FRAME_LEN], CodecError> {
    if p.footer_nibble > 0x0F {
        return Err(CodecError::FooterOutOfRange(p.footer_nibble));
    }
    let mut out = [0u8; FRAME_LEN];
    out[0] = HEADER;
    out[1] = p.seq;
    for (ch, &value) in p.channels.iter().enumerate() {
        if !(INT24_MIN..=INT24_MAX).contains(&value) {
            return Err(CodecError::CountOutOfRange { channel: ch, value });
        }
        let at = 2 + ch * 3;
        out[at..at + 3].copy_from_slice(&write_int24_be(value));
    }
    out[26..32].copy_from_slice(&p.aux);
    out[32] = STOP_BASE | p.footer_nibble;
    Ok(out)
}

fn is_stop_byte(b: u8) -> bool {
    b & 0xF0 == STOP_BASE
}

fn parse_frame(frame: &[u8]) -> RawPacket {
    debug_assert_eq!(frame.len(), FRAME_LEN);
    let mut channels = [0i32; CHANNELS_PER_PACKET];
    for (ch, slot) in channels.iter_mut().enumerate() {
        let at = 2 + ch * 3;
        *slot = parse_int24_be([frame[at], frame[at + 1], frame[at + 2]]);
    }
    let mut aux = [0u8; AUX_LEN];
    aux.copy_from_slice(&frame[26..32]);
    RawPacket {
        seq: frame[1],
        channels,
        aux,
        footer_nibble: frame[32] & 0x0F,
    }
}

/// Incremental frame decoder.
///
/// A syntactically valid frame (header, stop byte 33 bytes later) is accepted
/// when there is no counter history yet or when its counter continues the
/// last accepted one. A frame with a counter jump must be confirmed by the
/// frame right behind it: any well-formed frame will do while the stream is
/// aligned, but after discarded bytes the follower must also continue the
/// candidate's counter. A candidate that cannot be judged yet stays in the
/// carry; a rejected one costs only its header byte and the scan resumes at
/// the next 0xA0. After a few rejections in a row the counter history is
/// dropped so the decoder cannot lock itself out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DecoderState {
    carry: Vec<u8>,
    discarded_bytes: u64,
    frames_emitted: u64,
    last_seq: Option<u8>,
    resyncing: bool,
    rejected: u32,
}

const MAX_REJECTED: u32 = 3;

enum Verdict {
    Accept,
    Reject,
    Wait,
}

impl DecoderState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn discarded_bytes(&self) -> u64 {
        self.discarded_bytes
    }

    pub fn frames_emitted(&self) -> u64 {
        self.frames_emitted
    }

    pub fn carry(&self) -> &[u8] {
        &self.carry
    }

    /// Drop any partial frame and forget the counter history. Counters are kept.
    pub fn reset_alignment(&mut self) {
        self.discarded_bytes += self.carry.len() as u64;
        self.carry.clear();
        self.last_seq = None;
        self.resyncing = false;
        self.rejected = 0;
    }

    /// Decode `input`, appending complete packets to `out`.
    pub fn push(&mut self, input: &[u8], out: &mut Vec<RawPacket>) {
        self.carry.extend_from_slice(input);
        let buf = std::mem::take(&mut self.carry);
        let mut i = 0;
        while i < buf.len() {
            if buf[i] != HEADER {
                self.discard();
                i += 1;
                continue;
            }
            if buf.len() - i < FRAME_LEN {
                break;
            }
            if !is_stop_byte(buf[i + FRAME_LEN - 1]) {
                self.discard();
                i += 1;
                continue;
            }
            match self.judge(&buf[i..]) {
                Verdict::Accept => {
                    let packet = parse_frame(&buf[i..i + FRAME_LEN]);
                    self.last_seq = Some(packet.seq);
                    self.resyncing = false;
                    self.rejected = 0;
                    self.frames_emitted += 1;
                    out.push(packet);
                    i += FRAME_LEN;
                }
                Verdict::Wait => break,
                Verdict::Reject => {
                    self.rejected += 1;
                    if self.rejected >= MAX_REJECTED {
                        self.last_seq = None;
                    }
                    self.discard();
                    i += 1;
                }
            }
        }
        self.carry = buf[i..].to_vec();
    }

    /// `rest` starts with a well-formed candidate frame.
    fn judge(&self, rest: &[u8]) -> Verdict {
        let seq = rest[1];
        let Some(last) = self.last_seq else {
            return Verdict::Accept;
        };
        if seq == last.wrapping_add(1) {
            return Verdict::Accept;
        }
        let follower = &rest[FRAME_LEN..];
        if follower.first().is_some_and(|&b| b != HEADER) {
            return Verdict::Reject;
        }
        if self.resyncing && follower.get(1).is_some_and(|&b| b != seq.wrapping_add(1)) {
            return Verdict::Reject;
        }
        if follower.len() < FRAME_LEN {
            return Verdict::Wait;
        }
        if is_stop_byte(follower[FRAME_LEN - 1]) {
            Verdict::Accept
        } else {
            Verdict::Reject
        }
    }

    fn discard(&mut self) {
        self.discarded_bytes += 1;
        self.resyncing = true;
    }
}

pub type Decoder = DecoderState;

/// Functional form of [`DecoderState::push`].
pub fn decode_stream(input: &[u8], mut state: DecoderState) -> (Vec<RawPacket>, DecoderState) {
    let mut out = Vec::new();
    state.push(input, &mut out);
    (out, state)
}
