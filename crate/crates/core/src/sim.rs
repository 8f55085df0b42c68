//! Simulated Cyton board and dongle.
//!
//! [`Simulator`] is a pure state machine driven by explicit timestamps.
//! [`SimConnector`] puts it behind the [`Connector`]/[`Transport`] traits for
//! in-process use, and [`run`] services any other byte transport (pipe, pty).

use crate::clock::Clock;
use crate::codec::{encode_packet, microvolts_to_counts, DeviceCommand, Gain, RawPacket, CHANNELS_PER_PACKET};
use crate::transport::{Connector, Transport, TransportError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("loss probability must be in [0, 1), got {0}")]
    LossProb(f64),
    #[error("rate must be positive, got {0}")]
    Rate(f64),
    #[error("disconnect schedule: {0}")]
    Schedule(String),
    #[error("waveform: {0}")]
    Waveform(String),
    #[error("playback file {path}: {source}")]
    Playback {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WaveformSpec {
    Sine { freq: f64, amp: f64 },
    /// Raised-cosine pulses of `width_ms`, one every `1/rate` seconds, the
    /// first starting at t = 0.
    Pulse { rate: f64, width_ms: f64, amp: f64 },
    /// 10 Hz sine switched on for `on_s`, then off for `off_s`.
    AlphaBurst { on_s: f64, off_s: f64, amp: f64 },
    WhiteNoise { sigma: f64 },
    Sum { parts: Vec<WaveformSpec> },
    /// Headerless little-endian f32 µV, interleaved over all channels,
    /// looped.
    FilePlayback { path: PathBuf },
}

pub const ALPHA_BURST_HZ: f64 = 10.0;

impl WaveformSpec {
    fn validate(&self) -> Result<(), SimError> {
        let positive = |what: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SimError::Waveform(format!("{what} must be positive, got {v}")))
            }
        };
        match self {
            WaveformSpec::Sine { freq, amp } => {
                positive("sine frequency", *freq)?;
                positive("sine amplitude", *amp)
            }
            WaveformSpec::Pulse { rate, width_ms, amp } => {
                positive("pulse rate", *rate)?;
                positive("pulse width", *width_ms)?;
                positive("pulse amplitude", *amp)?;
                if width_ms / 1000.0 > 1.0 / rate {
                    return Err(SimError::Waveform("pulse wider than its period".into()));
                }
                Ok(())
            }
            WaveformSpec::AlphaBurst { on_s, off_s, amp } => {
                positive("burst on time", *on_s)?;
                positive("burst off time", *off_s)?;
                positive("burst amplitude", *amp)
            }
            WaveformSpec::WhiteNoise { sigma } => positive("noise sigma", *sigma),
            WaveformSpec::Sum { parts } => parts.iter().try_for_each(WaveformSpec::validate),
            WaveformSpec::FilePlayback { .. } => Ok(()),
        }
    }

    fn collect_paths<'a>(&'a self, out: &mut Vec<&'a Path>) {
        match self {
            WaveformSpec::FilePlayback { path } => out.push(path),
            WaveformSpec::Sum { parts } => parts.iter().for_each(|p| p.collect_paths(out)),
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disconnect {
    pub at_s: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Packet rate in Hz.
    pub rate: f64,
    pub daisy: bool,
    pub seed: u64,
    pub loss_prob: f64,
    /// Times are on the simulator's clock.
    pub disconnect_schedule: Vec<Disconnect>,
    /// Channel `c` plays `waveforms[c % len]`; empty means silence.
    pub waveforms: Vec<WaveformSpec>,
    pub reset_banner_delay_ms: u64,
    pub gain: Gain,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rate: 250.0,
            daisy: false,
            seed: 0,
            loss_prob: 0.0,
            disconnect_schedule: Vec::new(),
            waveforms: vec![WaveformSpec::Sum {
                parts: vec![
                    WaveformSpec::Sine { freq: 10.0, amp: 20.0 },
                    WaveformSpec::WhiteNoise { sigma: 5.0 },
                ],
            }],
            reset_banner_delay_ms: 200,
            gain: Gain::DEFAULT,
        }
    }
}

impl SimConfig {
    pub fn channels(&self) -> usize {
        if self.daisy {
            2 * CHANNELS_PER_PACKET
        } else {
            CHANNELS_PER_PACKET
        }
    }

    /// Rate of one board's samples.
    pub fn sample_rate(&self) -> f64 {
        if self.daisy {
            self.rate / 2.0
        } else {
            self.rate
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(SimError::Rate(self.rate));
        }
        if !(0.0..1.0).contains(&self.loss_prob) {
            return Err(SimError::LossProb(self.loss_prob));
        }
        let mut end = 0.0;
        for d in &self.disconnect_schedule {
            if !(d.at_s >= 0.0 && d.duration_s > 0.0) {
                return Err(SimError::Schedule(format!(
                    "window at {} s for {} s",
                    d.at_s, d.duration_s
                )));
            }
            if d.at_s < end {
                return Err(SimError::Schedule(format!(
                    "window at {} s overlaps or precedes the previous one",
                    d.at_s
                )));
            }
            end = d.at_s + d.duration_s;
        }
        self.waveforms.iter().try_for_each(WaveformSpec::validate)
    }
}

pub fn write_playback_file(path: &Path, frames: &[Vec<f32>]) -> std::io::Result<()> {
    let bytes: Vec<u8> = frames.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)
}

fn load_playback(path: &Path, channels: usize) -> Result<Vec<f32>, SimError> {
    let err = |source| SimError::Playback {
        path: path.to_owned(),
        source,
    };
    let bytes = std::fs::read(path).map_err(err)?;
    let frame_bytes = 4 * channels;
    if bytes.is_empty() || bytes.len() % frame_bytes != 0 {
        return Err(err(std::io::Error::new(
            std::io::ErrorKind::InvalidData,
            format!("{} bytes is not a whole number of {channels}-channel frames", bytes.len()),
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect())
}

struct EvalContext<'a> {
    noise: &'a mut ChaCha8Rng,
    files: &'a HashMap<PathBuf, Vec<f32>>,
    channels: usize,
    sample_rate: f64,
}

fn eval(w: &WaveformSpec, t: f64, channel: usize, cx: &mut EvalContext) -> f64 {
    match w {
        WaveformSpec::Sine { freq, amp } => amp * (2.0 * PI * freq * t).sin(),
        WaveformSpec::Pulse { rate, width_ms, amp } => {
            let since = (t * rate).fract() / rate;
            let width = width_ms / 1000.0;
            if t >= 0.0 && since < width {
                amp * (0.5 - 0.5 * (2.0 * PI * since / width).cos())
            } else {
                0.0
            }
        }
        WaveformSpec::AlphaBurst { on_s, off_s, amp } => {
            if t.rem_euclid(on_s + off_s) < *on_s {
                amp * (2.0 * PI * ALPHA_BURST_HZ * t).sin()
            } else {
                0.0
            }
        }
        WaveformSpec::WhiteNoise { sigma } => {
            let z: f64 = cx.noise.sample(StandardNormal);
            sigma * z
        }
        WaveformSpec::Sum { parts } => parts.iter().map(|p| eval(p, t, channel, cx)).sum(),
        WaveformSpec::FilePlayback { path } => {
            let data = &cx.files[path];
            let frames = (data.len() / cx.channels) as i64;
            let k = ((t * cx.sample_rate).round() as i64).rem_euclid(frames) as usize;
            data[k * cx.channels + channel] as f64
        }
    }
}

/// Ideal value of channel `channel` at time `t`, for waveforms without noise.
pub fn waveform_value(w: &WaveformSpec, t: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let files = HashMap::new();
    let mut cx = EvalContext {
        noise: &mut rng,
        files: &files,
        channels: 1,
        sample_rate: 1.0,
    };
    eval(w, t, 0, &mut cx)
}

pub fn banner(daisy: bool) -> String {
    let mut s = String::from("OpenBCI V3 8-16 channel\nOn Board ADS1299 Device ID: 0x3E\n");
    if daisy {
        s.push_str("On Daisy ADS1299 Device ID: 0x3E\n");
    }
    s.push_str("LIS3DH Device ID: 0x33\nFirmware: v3.1.2\n$$$");
    s
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SimStats {
    /// Packets written to the link.
    pub packets_sent: u64,
    /// Packets skipped by the loss model.
    pub packets_lost: u64,
    /// Disconnect windows that have started.
    pub disconnects: u64,
    pub banners: u64,
}

pub struct Simulator {
    cfg: SimConfig,
    files: HashMap<PathBuf, Vec<f32>>,
    loss_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    streaming: bool,
    stream_t0: Duration,
    stream_started: Option<Duration>,
    /// Packets scheduled since the last start, lost ones included.
    scheduled: u64,
    banner_due: Option<Duration>,
    windows: VecDeque<(Duration, Duration)>,
    down_until: Option<Duration>,
    link_epoch: u64,
    outbox: Vec<u8>,
    stats: SimStats,
}

impl Simulator {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.validate()?;
        let mut paths = Vec::new();
        cfg.waveforms.iter().for_each(|w| w.collect_paths(&mut paths));
        let mut files = HashMap::new();
        for p in paths {
            if !files.contains_key(p) {
                files.insert(p.to_owned(), load_playback(p, cfg.channels())?);
            }
        }
        let windows = cfg
            .disconnect_schedule
            .iter()
            .map(|d| (Duration::from_secs_f64(d.at_s), Duration::from_secs_f64(d.duration_s)))
            .collect();
        Ok(Simulator {
            loss_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            noise_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15),
            cfg,
            files,
            streaming: false,
            stream_t0: Duration::ZERO,
            stream_started: None,
            scheduled: 0,
            banner_due: None,
            windows,
            down_until: None,
            link_epoch: 0,
            outbox: Vec::new(),
            stats: SimStats::default(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn stats(&self) -> SimStats {
        self.stats
    }

    pub fn is_streaming(&self) -> bool {
        self.streaming
    }

    /// Clock time of the most recent 'b'.
    pub fn stream_started_at(&self) -> Option<Duration> {
        self.stream_started
    }

    pub fn link_epoch(&self) -> u64 {
        self.link_epoch
    }

    pub fn is_down(&self, now: Duration) -> bool {
        self.down_until.is_some_and(|u| now < u)
    }

    /// Clock time at which packet `n` (counted from the last start) is due;
    /// its samples are taken at that instant too.
    pub fn packet_time(&self, n: u64) -> Duration {
        self.stream_t0 + Duration::from_secs_f64(self.sample_offset_s(n))
    }

    fn sample_offset_s(&self, n: u64) -> f64 {
        if self.cfg.daisy {
            // both halves of a pair share the upper packet's instant
            (n / 2 * 2 + 2) as f64 / self.cfg.rate
        } else {
            (n + 1) as f64 / self.cfg.rate
        }
    }

    fn due_time(&self, n: u64) -> Duration {
        self.stream_t0 + Duration::from_secs_f64((n + 1) as f64 / self.cfg.rate)
    }

    /// Insert an unscheduled disconnect starting now.
    pub fn disconnect_for(&mut self, now: Duration, duration: Duration) {
        let pos = self.windows.partition_point(|(at, _)| *at <= now);
        self.windows.insert(pos, (now, duration));
    }

    /// Earliest pending event strictly after `now`, if any.
    pub fn next_event(&self) -> Option<Duration> {
        let packet = self.streaming.then(|| self.due_time(self.scheduled));
        [packet, self.banner_due, self.windows.front().map(|w| w.0)]
            .into_iter()
            .flatten()
            .min()
    }

    /// Process everything due at or before `now`, in time order.
    pub fn advance(&mut self, now: Duration) {
        while let Some(t) = self.next_event() {
            if t > now {
                break;
            }
            if self.windows.front().is_some_and(|w| w.0 == t) {
                let (at, dur) = self.windows.pop_front().unwrap();
                self.go_down(at + dur);
            } else if self.banner_due == Some(t) {
                self.banner_due = None;
                self.outbox.extend_from_slice(banner(self.cfg.daisy).as_bytes());
                self.stats.banners += 1;
            } else {
                self.emit_packet();
            }
        }
    }

    fn go_down(&mut self, until: Duration) {
        self.streaming = false;
        self.banner_due = None;
        self.outbox.clear();
        self.down_until = Some(until);
        self.link_epoch += 1;
        self.stats.disconnects += 1;
    }

    fn emit_packet(&mut self) {
        let n = self.scheduled;
        self.scheduled += 1;
        let t = self.packet_time(n).as_secs_f64();
        let upper = self.cfg.daisy && n % 2 == 1;
        let first = if upper { CHANNELS_PER_PACKET } else { 0 };
        let mut cx = EvalContext {
            noise: &mut self.noise_rng,
            files: &self.files,
            channels: self.cfg.channels(),
            sample_rate: self.cfg.sample_rate(),
        };
        let mut counts = [0i32; CHANNELS_PER_PACKET];
        if !self.cfg.waveforms.is_empty() {
            for (i, c) in counts.iter_mut().enumerate() {
                let ch = first + i;
                let w = &self.cfg.waveforms[ch % self.cfg.waveforms.len()];
                *c = microvolts_to_counts(eval(w, t, ch, &mut cx), self.cfg.gain);
            }
        }
        if self.loss_rng.random_bool(self.cfg.loss_prob) {
            self.stats.packets_lost += 1;
            return;
        }
        let packet = RawPacket::new((n % 256) as u8, counts);
        let frame = encode_packet(&packet).expect("counts are saturated into range");
        self.outbox.extend_from_slice(&frame);
        self.stats.packets_sent += 1;
    }

    /// Apply one command byte received at `now`. Unknown bytes and anything
    /// received while the link is down are ignored.
    pub fn handle_command(&mut self, byte: u8, now: Duration) {
        self.advance(now);
        if self.is_down(now) {
            return;
        }
        match DeviceCommand::from_byte(byte) {
            Some(DeviceCommand::StartStream) => {
                if !self.streaming {
                    self.streaming = true;
                    self.stream_t0 = now;
                    self.stream_started = Some(now);
                    self.scheduled = 0;
                }
            }
            Some(DeviceCommand::StopStream) => self.streaming = false,
            Some(DeviceCommand::SoftReset) => {
                self.streaming = false;
                self.banner_due = Some(now + Duration::from_millis(self.cfg.reset_banner_delay_ms));
            }
            Some(DeviceCommand::QueryDaisy) => {
                let reply: &[u8] = if self.cfg.daisy {
                    b"daisy attached$$$"
                } else {
                    b"no daisy attached$$$"
                };
                self.outbox.extend_from_slice(reply);
            }
            None => {}
        }
    }

    /// Take the bytes produced so far.
    pub fn take_output(&mut self) -> Vec<u8> {
        std::mem::take(&mut self.outbox)
    }

    pub fn drain_output_into(&mut self, buf: &mut Vec<u8>) -> usize {
        let n = self.outbox.len();
        buf.append(&mut self.outbox);
        n
    }
}

/// Serve the simulator over `transport` until `stop` is set or the peer
/// closes. Disconnect windows make the board fall silent.
pub fn run(
    sim: &mut Simulator,
    transport: &mut dyn Transport,
    clock: &dyn Clock,
    stop: &AtomicBool,
) -> Result<(), TransportError> {
    let mut buf = Vec::new();
    let idle = Duration::from_millis(20);
    while !stop.load(Ordering::Relaxed) {
        let now = clock.now();
        sim.advance(now);
        let out = sim.take_output();
        if !out.is_empty() {
            match transport.send(&out) {
                Err(TransportError::Closed) => return Ok(()),
                r => r?,
            }
        }
        let wait = sim
            .next_event()
            .map_or(idle, |t| t.saturating_sub(now))
            .min(idle);
        buf.clear();
        match transport.recv(&mut buf, wait) {
            Ok(_) => {
                for &b in &buf {
                    sim.handle_command(b, clock.now());
                }
            }
            Err(TransportError::Closed) => return Ok(()),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

struct Shared {
    sim: Mutex<Simulator>,
    clock: Arc<dyn Clock>,
    closures_seen: Mutex<u64>,
}

/// Opens in-process links to a shared simulator. A link dies when a
/// disconnect window starts; connecting during the window fails.
#[derive(Clone)]
pub struct SimConnector {
    shared: Arc<Shared>,
}

impl SimConnector {
    pub fn new(cfg: SimConfig, clock: Arc<dyn Clock>) -> Result<Self, SimError> {
        Ok(SimConnector {
            shared: Arc::new(Shared {
                sim: Mutex::new(Simulator::new(cfg)?),
                clock,
                closures_seen: Mutex::new(0),
            }),
        })
    }

    pub fn handle(&self) -> SimHandle {
        SimHandle {
            shared: self.shared.clone(),
        }
    }
}

impl Connector for SimConnector {
    fn connect(&mut self) -> Result<Box<dyn Transport>, TransportError> {
        let now = self.shared.clock.now();
        let mut sim = self.shared.sim.lock().unwrap();
        sim.advance(now);
        if sim.is_down(now) {
            return Err(TransportError::Unavailable("simulated dongle unplugged".into()));
        }
        // a fresh link supersedes any previous one
        sim.link_epoch += 1;
        sim.outbox.clear();
        Ok(Box::new(SimLink {
            shared: self.shared.clone(),
            epoch: sim.link_epoch,
            closed: false,
        }))
    }

    fn describe(&self) -> String {
        "sim".into()
    }
}

/// Test-side view of an in-process simulator.
#[derive(Clone)]
pub struct SimHandle {
    shared: Arc<Shared>,
}

impl SimHandle {
    pub fn with<R>(&self, f: impl FnOnce(&mut Simulator) -> R) -> R {
        f(&mut self.lock())
    }

    fn lock(&self) -> MutexGuard<'_, Simulator> {
        self.shared.sim.lock().unwrap()
    }

    pub fn stats(&self) -> SimStats {
        self.lock().stats()
    }

    pub fn disconnect_for(&self, duration: Duration) {
        let now = self.shared.clock.now();
        let mut sim = self.lock();
        sim.disconnect_for(now, duration);
        sim.advance(now);
    }

    /// Number of times a link reported its closure.
    pub fn closures(&self) -> u64 {
        *self.shared.closures_seen.lock().unwrap()
    }

    pub fn stream_started_at(&self) -> Option<Duration> {
        self.lock().stream_started_at()
    }

    pub fn is_streaming(&self) -> bool {
        self.lock().is_streaming()
    }
}

struct SimLink {
    shared: Arc<Shared>,
    epoch: u64,
    closed: bool,
}

impl SimLink {
    fn close(&mut self) -> TransportError {
        if !self.closed {
            self.closed = true;
            *self.shared.closures_seen.lock().unwrap() += 1;
        }
        TransportError::Closed
    }
}

impl Transport for SimLink {
    fn send(&mut self, bytes: &[u8]) -> Result<(), TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let now = self.shared.clock.now();
        let mut sim = self.shared.sim.lock().unwrap();
        sim.advance(now);
        if sim.link_epoch != self.epoch {
            drop(sim);
            return Err(self.close());
        }
        for &b in bytes {
            sim.handle_command(b, now);
        }
        Ok(())
    }

    fn recv(&mut self, buf: &mut Vec<u8>, timeout: Duration) -> Result<usize, TransportError> {
        if self.closed {
            return Err(TransportError::Closed);
        }
        let clock = self.shared.clock.clone();
        let deadline = clock.now() + timeout;
        loop {
            let now = clock.now();
            let mut sim = self.shared.sim.lock().unwrap();
            sim.advance(now);
            if sim.link_epoch != self.epoch {
                drop(sim);
                return Err(self.close());
            }
            let n = sim.drain_output_into(buf);
            if n > 0 {
                return Ok(n);
            }
            if now >= deadline {
                return Ok(0);
            }
            let wake = sim.next_event().map_or(deadline, |t| t.min(deadline));
            drop(sim);
            clock.sleep(wake.saturating_sub(now).max(Duration::from_micros(50)));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;
    use crate::codec::{counts_to_microvolts, decode_stream, DecoderState};

    fn ms(v: u64) -> Duration {
        Duration::from_millis(v)
    }

    fn quiet() -> SimConfig {
        SimConfig {
            waveforms: vec![WaveformSpec::Sine { freq: 10.0, amp: 100.0 }],
            ..SimConfig::default()
        }
    }

    #[test]
    fn reset_emits_banner_after_delay() {
        let mut sim = Simulator::new(quiet()).unwrap();
        sim.handle_command(b'v', Duration::ZERO);
        sim.advance(ms(199));
        assert!(sim.take_output().is_empty());
        sim.advance(ms(200));
        let out = String::from_utf8(sim.take_output()).unwrap();
        assert!(out.ends_with("$$$"), "{out}");
    }

    #[test]
    fn one_second_is_250_packets() {
        let mut sim = Simulator::new(quiet()).unwrap();
        sim.handle_command(b'b', ms(10));
        sim.advance(ms(1010));
        let (packets, dec) = decode_stream(&sim.take_output(), DecoderState::new());
        assert_eq!(packets.len(), 250);
        assert_eq!(dec.discarded_bytes(), 0);
        for w in packets.windows(2) {
            assert_eq!(w[1].seq, w[0].seq.wrapping_add(1));
        }
        sim.handle_command(b's', ms(1010));
        sim.advance(ms(5000));
        assert!(sim.take_output().is_empty());
    }

    #[test]
    fn sine_survives_quantisation() {
        let mut sim = Simulator::new(quiet()).unwrap();
        sim.handle_command(b'b', Duration::ZERO);
        sim.advance(ms(1000));
        let (packets, _) = decode_stream(&sim.take_output(), DecoderState::new());
        let lsb = Gain::DEFAULT.lsb_microvolts();
        for (n, p) in packets.iter().enumerate() {
            let t = (n + 1) as f64 / 250.0;
            let want = 100.0 * (2.0 * PI * 10.0 * t).sin();
            let got = counts_to_microvolts(p.channels[3], Gain::DEFAULT);
            assert!((got - want).abs() <= lsb, "{n}: {got} vs {want}");
        }
    }

    #[test]
    fn unknown_bytes_are_ignored() {
        let mut sim = Simulator::new(quiet()).unwrap();
        for b in [b'x', b'?', 0xFF, b'\n'] {
            sim.handle_command(b, Duration::ZERO);
        }
        sim.advance(ms(1000));
        assert!(sim.take_output().is_empty());
        sim.handle_command(b'c', ms(1000));
        assert!(sim.take_output().ends_with(b"$$$"));
    }

    #[test]
    fn daisy_packets_alternate_boards() {
        let cfg = SimConfig {
            daisy: true,
            waveforms: (0..16)
                .map(|c| WaveformSpec::Sine {
                    freq: 1.0 + c as f64,
                    amp: 50.0,
                })
                .collect(),
            ..SimConfig::default()
        };
        let mut sim = Simulator::new(cfg.clone()).unwrap();
        sim.handle_command(b'b', Duration::ZERO);
        sim.advance(ms(100));
        let (packets, _) = decode_stream(&sim.take_output(), DecoderState::new());
        assert_eq!(packets.len(), 25);
        for (n, p) in packets.iter().enumerate() {
            let base = if n % 2 == 0 { 0 } else { 8 };
            let t = (n / 2 * 2 + 2) as f64 / 250.0;
            let want = waveform_value(&cfg.waveforms[base + 1], t);
            let got = counts_to_microvolts(p.channels[1], Gain::DEFAULT);
            assert!((got - want).abs() <= Gain::DEFAULT.lsb_microvolts());
        }
    }

    #[test]
    fn pulse_shape() {
        let w = WaveformSpec::Pulse {
            rate: 1.0,
            width_ms: 100.0,
            amp: 10.0,
        };
        assert_eq!(waveform_value(&w, 0.0), 0.0);
        assert!((waveform_value(&w, 0.05) - 10.0).abs() < 1e-9);
        assert!((waveform_value(&w, 2.05) - 10.0).abs() < 1e-9);
        assert_eq!(waveform_value(&w, 0.5), 0.0);
    }

    #[test]
    fn validation() {
        let bad = |cfg: SimConfig| Simulator::new(cfg).is_err();
        assert!(bad(SimConfig {
            loss_prob: 1.0,
            ..quiet()
        }));
        assert!(bad(SimConfig {
            disconnect_schedule: vec![
                Disconnect { at_s: 1.0, duration_s: 1.0 },
                Disconnect { at_s: 1.5, duration_s: 1.0 }
            ],
            ..quiet()
        }));
        assert!(bad(SimConfig {
            waveforms: vec![WaveformSpec::WhiteNoise { sigma: -1.0 }],
            ..quiet()
        }));
        assert!(bad(SimConfig {
            waveforms: vec![WaveformSpec::FilePlayback {
                path: "/nonexistent/sim.f32".into()
            }],
            ..quiet()
        }));
    }

    #[test]
    fn link_closes_once_per_disconnect() {
        let clock = Arc::new(ManualClock::new());
        let cfg = SimConfig {
            disconnect_schedule: vec![Disconnect { at_s: 1.0, duration_s: 0.5 }],
            ..quiet()
        };
        let mut conn = SimConnector::new(cfg, clock.clone()).unwrap();
        let handle = conn.handle();
        let mut link = conn.connect().unwrap();
        link.send(b"b").unwrap();
        let mut buf = Vec::new();
        loop {
            match link.recv(&mut buf, ms(10)) {
                Ok(_) => assert!(clock.now() < Duration::from_secs(2)),
                Err(TransportError::Closed) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert!(matches!(link.recv(&mut buf, ms(10)), Err(TransportError::Closed)));
        assert!(matches!(link.send(b"s"), Err(TransportError::Closed)));
        assert_eq!(handle.closures(), 1);
        let _fresh = loop {
            match conn.connect() {
                Ok(l) => break l,
                Err(_) => clock.advance(ms(100)),
            }
        };
        assert!(clock.now() >= Duration::from_millis(1500));
        let (packets, _) = decode_stream(&buf, DecoderState::new());
        assert_eq!(packets.len(), 249);
    }
}
