//! Processing stage: stream repair, filtering, resampling, history, tags and
//! epochs, and the batches and status reports sent to the gateway.

use crate::lifecycle::DaemonState;
use crate::messages::{AcqEvent, ClientId, Job, Outbound, Request};
use crate::protocol::{ErrorCode, ServerMessage, Status, StreamKind};
use crate::tags::{Anchor, TagRegistry};
use cyton_core::clock::Clock;
use cyton_core::dsp::{
    design_bandpass, extract_epoch, BiquadCascade, DspError, Epoch, EpochError, EpochWindow, FilterSpec, Resampler,
};
use cyton_core::spsc::{Consumer, Producer};
use cyton_core::stream::{ReconcileStats, Reconciled, Reconciler, RingBuffer, SampleFrame, StreamConfig, StreamReport};
use log::debug;
use std::collections::VecDeque;
use std::sync::Arc;
use std::time::{Duration, SystemTime};

#[derive(Debug, Clone)]
pub struct ProcessingConfig {
    pub stream: StreamConfig,
    pub filter: FilterSpec,
    pub resample: bool,
    pub batch_frames: usize,
    pub latency_compensation_ms: f64,
    pub status_interval: Duration,
    pub tag_capacity: usize,
    pub max_pending_epochs: usize,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        ProcessingConfig {
            stream: StreamConfig::default(),
            filter: FilterSpec::default(),
            resample: true,
            batch_frames: 25,
            latency_compensation_ms: 0.0,
            status_interval: Duration::from_secs(1),
            tag_capacity: 4096,
            max_pending_epochs: 256,
        }
    }
}

#[derive(Debug, Default)]
struct Batch {
    first_index: u64,
    frames: Vec<Vec<f64>>,
    interpolated: Vec<u32>,
}

impl Batch {
    /// Append one frame. A break in the index sequence first flushes what
    /// was collected; a full batch is flushed too.
    fn add(&mut self, stream: StreamKind, index: u64, values: &[f64], interpolated: bool, size: usize, out: &mut Vec<ServerMessage>) {
        if !self.frames.is_empty() && index != self.first_index + self.frames.len() as u64 {
            out.extend(self.take(stream));
        }
        if self.frames.is_empty() {
            self.first_index = index;
        }
        if interpolated {
            self.interpolated.push(self.frames.len() as u32);
        }
        self.frames.push(values.to_vec());
        if self.frames.len() >= size {
            out.extend(self.take(stream));
        }
    }

    fn take(&mut self, stream: StreamKind) -> Option<ServerMessage> {
        if self.frames.is_empty() {
            return None;
        }
        Some(ServerMessage::Data {
            stream,
            first_index: self.first_index,
            frames: std::mem::take(&mut self.frames),
            interpolated: std::mem::take(&mut self.interpolated),
        })
    }
}

struct PendingEpoch {
    client: ClientId,
    tag_id: u64,
    index: u64,
    window: EpochWindow,
    stream: StreamKind,
}

pub struct Processing {
    cfg: ProcessingConfig,
    clock: Arc<dyn Clock>,
    reconciler: Reconciler,
    filter: BiquadCascade,
    notch: BiquadCascade,
    resampler: Option<Resampler>,
    /// `(native index, resampler input count)` at each discontinuity.
    resample_segments: VecDeque<(u64, u64)>,
    last_native: Option<u64>,
    raw: RingBuffer,
    filtered: RingBuffer,
    resampled: RingBuffer,
    batches: [Batch; 3],
    state: DaemonState,
    anchor: Option<Anchor>,
    tags: TagRegistry,
    pending: Vec<PendingEpoch>,
    packets: u64,
    discarded_bytes: u64,
    reconnects: u64,
    last_received: Duration,
    rate_mark: (u64, Duration),
    packet_rate: f64,
    next_status: Duration,
    dropped_messages: u64,
    acq: Consumer<AcqEvent>,
    requests: Consumer<Request>,
    out: Producer<Outbound>,
    jobs: Producer<Job>,
}

impl Processing {
    pub fn new(
        cfg: ProcessingConfig,
        clock: Arc<dyn Clock>,
        acq: Consumer<AcqEvent>,
        requests: Consumer<Request>,
        out: Producer<Outbound>,
        jobs: Producer<Job>,
    ) -> Result<Self, crate::config::ConfigError> {
        let reconciler = Reconciler::new(cfg.stream.clone())?;
        let rate = cfg.stream.effective_rate();
        let n = cfg.stream.n_channels;
        let notch = cfg.filter.notch.design(cfg.filter.notch_q, rate)?.with_channels(n);
        let filter = design_bandpass(&cfg.filter, rate)?.with_channels(n);
        let capacity = cfg.stream.history_capacity();
        let now = clock.now();
        Ok(Processing {
            resampler: cfg.resample.then(|| Resampler::new(n)),
            resample_segments: VecDeque::new(),
            last_native: None,
            raw: RingBuffer::new(capacity),
            filtered: RingBuffer::new(capacity),
            resampled: RingBuffer::new(capacity * Resampler::RATIO_UP / Resampler::RATIO_DOWN + 1),
            batches: Default::default(),
            state: DaemonState::Idle,
            anchor: None,
            tags: TagRegistry::new(cfg.tag_capacity),
            pending: Vec::new(),
            packets: 0,
            discarded_bytes: 0,
            reconnects: 0,
            last_received: Duration::ZERO,
            rate_mark: (0, Duration::ZERO),
            packet_rate: 0.0,
            next_status: now + cfg.status_interval,
            dropped_messages: 0,
            reconciler,
            filter,
            notch,
            cfg,
            clock,
            acq,
            requests,
            out,
            jobs,
        })
    }

    pub fn state(&self) -> DaemonState {
        self.state
    }

    pub fn anchor(&self) -> Option<&Anchor> {
        self.anchor.as_ref()
    }

    pub fn history(&self, stream: StreamKind) -> &RingBuffer {
        match stream {
            StreamKind::Raw => &self.raw,
            StreamKind::Filtered => &self.filtered,
            StreamKind::Resampled => &self.resampled,
        }
    }

    pub fn rate(&self, stream: StreamKind) -> f64 {
        let native = self.cfg.stream.effective_rate();
        match stream {
            StreamKind::Resampled => native * Resampler::RATIO_UP as f64 / Resampler::RATIO_DOWN as f64,
            _ => native,
        }
    }

    /// Drain both inputs and run the status timer. Returns whether anything
    /// was processed.
    pub fn step(&mut self) -> bool {
        let mut busy = self.drain_acquisition();
        while let Some(req) = self.requests.pop() {
            busy = true;
            self.handle_request(req);
        }
        let now = self.clock.now();
        if now >= self.next_status {
            self.next_status = now + self.cfg.status_interval;
            self.update_rate();
            let status = self.status();
            self.send(Outbound::Broadcast(ServerMessage::Status(status)));
        }
        busy
    }

    pub fn reconcile_stats(&self) -> ReconcileStats {
        self.reconciler.stats()
    }

    pub fn status(&self) -> Status {
        let s = self.reconciler.stats();
        Status {
            state: self.state,
            packets: self.packets,
            packet_rate: self.packet_rate,
            gaps_interpolated: s.gaps_interpolated,
            interpolated_frames: s.interpolated_frames,
            dropouts: s.dropouts,
            dropped_frames: s.dropped_frames,
            duplicates: s.duplicates,
            discarded_bytes: self.discarded_bytes,
            reconnects: self.reconnects,
            next_index: self.reconciler.next_index(),
            stats_time_s: self.last_received.as_secs_f64(),
            dropped_messages: self.dropped_messages,
        }
    }

    fn update_rate(&mut self) {
        let (packets, at) = self.rate_mark;
        let dt = self.last_received.saturating_sub(at).as_secs_f64();
        self.packet_rate = if dt > 0.0 {
            (self.packets - packets) as f64 / dt
        } else {
            0.0
        };
        if !self.state.is_acquiring() {
            self.packet_rate = 0.0;
        }
        self.rate_mark = (self.packets, self.last_received);
    }

    fn send(&mut self, msg: Outbound) {
        if self.out.push(msg).is_err() {
            self.dropped_messages += 1;
        }
    }

    fn reply(&mut self, client: ClientId, msg: ServerMessage) {
        self.send(Outbound::To { client, msg });
    }

    fn error(&mut self, client: ClientId, code: ErrorCode, detail: impl Into<String>) {
        self.reply(client, ServerMessage::error(code, detail));
    }

    fn drain_acquisition(&mut self) -> bool {
        let mut busy = false;
        while let Some(ev) = self.acq.pop() {
            busy = true;
            self.handle_event(ev);
        }
        if busy {
            self.serve_pending();
        }
        busy
    }

    fn handle_event(&mut self, ev: AcqEvent) {
        match ev {
            AcqEvent::SegmentStart { at } => {
                self.reconciler.new_segment();
                self.anchor = Some(Anchor {
                    monotonic: at,
                    wall: SystemTime::now(),
                    first_index: self.reconciler.next_index(),
                });
                debug!("anchor at {:?}, index {}", at, self.reconciler.next_index());
            }
            AcqEvent::Packets {
                packets,
                received,
                discarded_bytes,
            } => {
                self.packets += packets.len() as u64;
                self.discarded_bytes = discarded_bytes;
                if self.rate_mark.1.is_zero() || !self.state.is_acquiring() {
                    self.rate_mark = (self.packets - packets.len() as u64, received);
                }
                self.last_received = received;
                let Reconciled { frames, reports } = self.reconciler.push_packets(&packets);
                for r in &reports {
                    match r {
                        StreamReport::Gap(g) => debug!("gap: {g:?}"),
                        StreamReport::Duplicate { seq } => debug!("duplicate counter {seq}"),
                    }
                }
                for f in frames {
                    self.on_frame(f);
                }
            }
            AcqEvent::State { state, reconnects } => {
                self.reconnects = reconnects;
                if state != self.state {
                    self.state = state;
                    if !state.is_acquiring() {
                        self.anchor = None;
                    }
                    if state != DaemonState::Streaming {
                        self.flush_batches();
                    }
                    let status = self.status();
                    self.send(Outbound::Broadcast(ServerMessage::Status(status)));
                }
            }
            AcqEvent::CommandResult { client, result } => {
                let Some(client) = client else { return };
                match result {
                    Ok(_) => {
                        let status = self.status();
                        self.reply(client, ServerMessage::Status(status));
                    }
                    Err(e) => self.error(client, ErrorCode::State, e.to_string()),
                }
            }
        }
    }

    fn on_frame(&mut self, frame: SampleFrame) {
        let fan_out = self.state == DaemonState::Streaming;
        let size = self.cfg.batch_frames;
        let mut ready = Vec::new();
        let index = frame.index;
        let mut values = frame.values.clone();
        self.notch.process_frame(&mut values).expect("channel count fixed at start");
        self.filter.process_frame(&mut values).expect("channel count fixed at start");

        if let Some(r) = self.resampler.as_mut() {
            if self.last_native.is_none_or(|last| index != last + 1) {
                self.resample_segments.push_back((index, r.input_count()));
                if self.resample_segments.len() > 64 {
                    self.resample_segments.pop_front();
                }
            }
            let mut produced = Vec::new();
            r.push_frame(&values, |m, y| produced.push((m, y)));
            for (m, y) in produced {
                if fan_out {
                    self.batches[2].add(StreamKind::Resampled, m, &y, false, size, &mut ready);
                }
                self.resampled.append(SampleFrame {
                    index: m,
                    values: y,
                    interpolated: false,
                });
            }
        }
        self.last_native = Some(index);

        if fan_out {
            self.batches[0].add(StreamKind::Raw, index, &frame.values, frame.interpolated, size, &mut ready);
            self.batches[1].add(StreamKind::Filtered, index, &values, frame.interpolated, size, &mut ready);
        }
        for msg in ready {
            self.send(Outbound::Broadcast(msg));
        }
        self.filtered.append(SampleFrame {
            index,
            values,
            interpolated: frame.interpolated,
        });
        self.raw.append(frame);
    }

    fn flush_batches(&mut self) {
        for (i, kind) in StreamKind::ALL.into_iter().enumerate() {
            if let Some(msg) = self.batches[i].take(kind) {
                self.send(Outbound::Broadcast(msg));
            }
        }
    }

    /// Tag index translated to `stream`'s own index.
    fn stream_index(&self, stream: StreamKind, native: u64) -> Option<u64> {
        if stream != StreamKind::Resampled {
            return Some(native);
        }
        let &(start, input) = self
            .resample_segments
            .iter()
            .rev()
            .find(|(start, _)| *start <= native)
            .or(self.resample_segments.front())?;
        let count = input as f64 + native as f64 - start as f64;
        Some(Resampler::output_position_of_input(count).round().max(0.0) as u64)
    }

    fn handle_request(&mut self, req: Request) {
        match req {
            Request::Tag {
                client,
                label,
                client_time,
                received,
            } => {
                // an anchor pushed before the tag arrived must be seen first
                self.drain_acquisition();
                let rate = self.cfg.stream.effective_rate();
                let anchor = if self.state.is_acquiring() { self.anchor } else { None };
                match self.tags.register(
                    label,
                    client_time,
                    received,
                    anchor.as_ref(),
                    rate,
                    self.cfg.latency_compensation_ms,
                ) {
                    Ok(tag) => {
                        let msg = ServerMessage::TagAck {
                            tag_id: tag.tag_id,
                            label: tag.label.clone(),
                            client_time: tag.client_time,
                            resolved_index: tag.resolved_index.expect("registered tags are resolved"),
                        };
                        self.reply(client, msg);
                    }
                    Err(e) => self.error(client, ErrorCode::TagRejected, e.to_string()),
                }
            }
            Request::Epoch {
                client,
                tag_id,
                window,
                stream,
            } => {
                if let Err(e) = self.check_stream(stream).and(window.validate().map_err(|e| e.to_string())) {
                    return self.error(client, ErrorCode::InvalidRequest, e);
                }
                let Some(index) = self.tags.get(tag_id).and_then(|t| t.resolved_index) else {
                    return self.error(client, ErrorCode::UnknownTag, format!("no tag {tag_id}"));
                };
                let Some(index) = self.stream_index(stream, index) else {
                    return self.error(client, ErrorCode::InsufficientData, "no resampled data yet");
                };
                let p = PendingEpoch {
                    client,
                    tag_id,
                    index,
                    window,
                    stream,
                };
                if !self.try_epoch(&p) {
                    if self.pending.len() >= self.cfg.max_pending_epochs {
                        return self.error(client, ErrorCode::Busy, "too many epochs awaiting data");
                    }
                    self.pending.push(p);
                }
            }
            Request::BandPower {
                client,
                band,
                window_s,
                stream,
            } => {
                if let Err(e) = self.check_stream(stream) {
                    return self.error(client, ErrorCode::InvalidRequest, e);
                }
                let rate = self.rate(stream);
                if !(window_s > 0.0 && window_s.is_finite()) {
                    return self.error(client, ErrorCode::InvalidRequest, "window_s must be positive");
                }
                if !(band.0 >= 0.0 && band.0 < band.1 && band.1 <= rate / 2.0) {
                    let e = DspError::InvalidBand {
                        low: band.0,
                        high: band.1,
                    };
                    return self.error(client, ErrorCode::InvalidRequest, e.to_string());
                }
                let n = (window_s * rate).round() as usize;
                let ring = self.history(stream);
                if n < rate.floor() as usize || ring.len() < n {
                    let detail = format!("need {n} samples of at least one second, have {}", ring.len());
                    return self.error(client, ErrorCode::InsufficientData, detail);
                }
                let channels = ring.latest().map_or(0, |f| f.values.len());
                let mut data = vec![Vec::with_capacity(n); channels];
                for f in ring.tail(n) {
                    for (ch, v) in f.values.iter().enumerate() {
                        data[ch].push(*v);
                    }
                }
                let job = Job::BandPower {
                    client,
                    band,
                    window_s,
                    stream,
                    rate,
                    data,
                };
                if self.jobs.push(job).is_err() {
                    self.error(client, ErrorCode::Busy, "worker queue full");
                }
            }
            Request::Average {
                client,
                label,
                window,
                stream,
            } => {
                if let Err(e) = self.check_stream(stream).and(window.validate().map_err(|e| e.to_string())) {
                    return self.error(client, ErrorCode::InvalidRequest, e);
                }
                let rate = self.rate(stream);
                let indices: Vec<(u64, u64)> = self
                    .tags
                    .with_label(&label)
                    .filter_map(|t| Some((t.tag_id, t.resolved_index?)))
                    .collect();
                if indices.is_empty() {
                    return self.error(client, ErrorCode::UnknownTag, format!("no tags labelled {label:?}"));
                }
                let epochs: Vec<Epoch> = indices
                    .into_iter()
                    .filter_map(|(id, i)| {
                        let i = self.stream_index(stream, i)?;
                        extract_epoch(self.history(stream), id, i, &window, rate).ok()
                    })
                    .collect();
                if epochs.is_empty() {
                    return self.error(client, ErrorCode::InsufficientData, "no complete epochs in the history");
                }
                let job = Job::Average {
                    client,
                    label,
                    stream,
                    epochs,
                };
                if self.jobs.push(job).is_err() {
                    self.error(client, ErrorCode::Busy, "worker queue full");
                }
            }
            Request::Status { client } => {
                let status = self.status();
                self.reply(client, ServerMessage::Status(status));
            }
        }
    }

    fn check_stream(&self, stream: StreamKind) -> Result<(), String> {
        if stream == StreamKind::Resampled && self.resampler.is_none() {
            Err("resampling is disabled".into())
        } else {
            Ok(())
        }
    }

    /// Answer `p` if its data is complete or can never be. Returns false
    /// while it is still waiting.
    fn try_epoch(&mut self, p: &PendingEpoch) -> bool {
        let rate = self.rate(p.stream);
        match extract_epoch(self.history(p.stream), p.tag_id, p.index, &p.window, rate) {
            Ok(e) => {
                let msg = ServerMessage::Epoch {
                    tag_id: e.tag_id,
                    stream: p.stream,
                    start_index: e.start_index,
                    rate: e.rate,
                    data: e.data,
                };
                self.reply(p.client, msg);
                true
            }
            Err(EpochError::Pending { .. }) => false,
            Err(e @ EpochError::Expired) => {
                self.error(p.client, ErrorCode::Expired, e.to_string());
                true
            }
            Err(e) => {
                self.error(p.client, ErrorCode::InvalidRequest, e.to_string());
                true
            }
        }
    }

    fn serve_pending(&mut self) {
        if self.pending.is_empty() {
            return;
        }
        let pending = std::mem::take(&mut self.pending);
        for p in pending {
            if !self.try_epoch(&p) {
                self.pending.push(p);
            }
        }
    }
}
