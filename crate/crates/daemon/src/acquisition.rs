//! Acquisition stage: owns the byte transport, the decoder and the device
//! lifecycle.

use crate::lifecycle::{Action, Command, DaemonState, Event, Lifecycle};
use crate::messages::{AcqCommand, AcqEvent, ClientId};
use cyton_core::clock::Clock;
use cyton_core::codec::{DecoderState, DeviceCommand, RawPacket, REPLY_TERMINATOR};
use cyton_core::spsc::{Consumer, Producer};
use cyton_core::transport::{Connector, Transport, TransportError};
use log::{debug, info, warn};
use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct AcquisitionConfig {
    pub poll: Duration,
    pub backoff_min: Duration,
    pub backoff_max: Duration,
    pub banner_timeout: Duration,
    /// Pause after the banner before the next command.
    pub guard: Duration,
    pub stall_timeout: Duration,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            poll: Duration::from_millis(2),
            backoff_min: Duration::from_millis(500),
            backoff_max: Duration::from_secs(8),
            banner_timeout: Duration::from_secs(2),
            guard: Duration::from_millis(200),
            stall_timeout: Duration::from_secs(3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Handshake {
    Done,
    AwaitBanner { deadline: Duration },
    Guard { until: Duration },
}

pub struct Acquisition {
    cfg: AcquisitionConfig,
    connector: Box<dyn Connector>,
    link: Option<Box<dyn Transport>>,
    clock: Arc<dyn Clock>,
    lifecycle: Lifecycle,
    decoder: DecoderState,
    handshake: Handshake,
    banner_tail: Vec<u8>,
    deferred: VecDeque<AcqCommand>,
    restart_pending: bool,
    anchor_armed: bool,
    backoff: Duration,
    next_attempt: Duration,
    last_rx: Duration,
    reconnects: u64,
    discarded_before: u64,
    lost_events: u64,
    commands: Consumer<AcqCommand>,
    events: Producer<AcqEvent>,
    buf: Vec<u8>,
}

impl Acquisition {
    /// Takes an already opened link and begins with a soft-reset handshake.
    pub fn new(
        cfg: AcquisitionConfig,
        connector: Box<dyn Connector>,
        link: Box<dyn Transport>,
        clock: Arc<dyn Clock>,
        commands: Consumer<AcqCommand>,
        events: Producer<AcqEvent>,
    ) -> Self {
        let now = clock.now();
        let mut a = Acquisition {
            backoff: cfg.backoff_min,
            cfg,
            connector,
            link: Some(link),
            clock,
            lifecycle: Lifecycle::new(),
            decoder: DecoderState::new(),
            handshake: Handshake::Done,
            banner_tail: Vec::new(),
            deferred: VecDeque::new(),
            restart_pending: false,
            anchor_armed: false,
            next_attempt: now,
            last_rx: now,
            reconnects: 0,
            discarded_before: 0,
            lost_events: 0,
            commands,
            events,
            buf: Vec::with_capacity(4096),
        };
        a.begin_handshake();
        a
    }

    pub fn state(&self) -> DaemonState {
        self.lifecycle.state()
    }

    pub fn reconnects(&self) -> u64 {
        self.reconnects
    }

    pub fn is_handshaking(&self) -> bool {
        self.handshake != Handshake::Done
    }

    /// Bytes thrown away by the decoder over all links.
    pub fn discarded_bytes(&self) -> u64 {
        self.discarded_before + self.decoder.discarded_bytes()
    }

    /// Events that did not fit the outgoing queue. Stays zero at nominal rate.
    pub fn lost_events(&self) -> u64 {
        self.lost_events
    }

    /// One iteration: take commands, move bytes, run timers. Blocks for at
    /// most about one poll interval.
    pub fn step(&mut self) {
        while let Some(cmd) = self.commands.pop() {
            self.deferred.push_back(cmd);
        }
        self.run_timers();
        self.run_deferred();

        if self.link.is_none() {
            self.try_reconnect();
            return;
        }
        self.buf.clear();
        let result = self.link.as_mut().unwrap().recv(&mut self.buf, self.cfg.poll);
        match result {
            Ok(0) => {}
            Ok(_) => {
                self.last_rx = self.clock.now();
                self.ingest();
            }
            Err(e) => self.link_lost(e),
        }
        if self.lifecycle.state().is_acquiring()
            && self.link.is_some()
            && self.clock.now().saturating_sub(self.last_rx) > self.cfg.stall_timeout
        {
            warn!("no data for {:?}, dropping the link", self.cfg.stall_timeout);
            self.link_lost(TransportError::Closed);
        }
    }

    fn emit(&mut self, ev: AcqEvent) {
        if self.events.push(ev).is_err() {
            self.lost_events += 1;
        }
    }

    fn emit_state(&mut self) {
        let ev = AcqEvent::State {
            state: self.lifecycle.state(),
            reconnects: self.reconnects,
        };
        self.emit(ev);
    }

    fn ingest(&mut self) {
        if let Handshake::AwaitBanner { .. } = self.handshake {
            self.banner_tail.extend_from_slice(&self.buf);
            if contains(&self.banner_tail, REPLY_TERMINATOR) {
                debug!("banner received");
                self.banner_tail.clear();
                self.handshake = Handshake::Guard {
                    until: self.clock.now() + self.cfg.guard,
                };
            } else {
                let keep = self.banner_tail.len().saturating_sub(REPLY_TERMINATOR.len());
                self.banner_tail.drain(..keep);
            }
            return;
        }
        let mut packets: Vec<RawPacket> = Vec::new();
        self.decoder.push(&self.buf, &mut packets);
        if packets.is_empty() || !self.lifecycle.state().is_acquiring() {
            return;
        }
        let received = self.clock.now();
        if std::mem::take(&mut self.anchor_armed) {
            self.emit(AcqEvent::SegmentStart { at: received });
        }
        let discarded_bytes = self.discarded_bytes();
        self.emit(AcqEvent::Packets {
            packets,
            received,
            discarded_bytes,
        });
    }

    fn run_timers(&mut self) {
        let now = self.clock.now();
        match self.handshake {
            Handshake::AwaitBanner { deadline } if now >= deadline => {
                warn!("no reset banner within {:?}, continuing", self.cfg.banner_timeout);
                self.handshake = Handshake::Guard {
                    until: now + self.cfg.guard,
                };
            }
            Handshake::Guard { until } if now >= until => {
                self.handshake = Handshake::Done;
                self.decoder.reset_alignment();
                if std::mem::take(&mut self.restart_pending) {
                    info!("restarting the stream after reconnection");
                    self.execute(AcqCommand {
                        client: None,
                        command: Command::Start,
                    });
                }
            }
            _ => {}
        }
    }

    fn run_deferred(&mut self) {
        while self.handshake == Handshake::Done {
            let Some(cmd) = self.deferred.pop_front() else { break };
            self.execute(cmd);
        }
    }

    fn execute(&mut self, cmd: AcqCommand) {
        let result = self.lifecycle.apply(Event::Command(cmd.command));
        match result {
            Ok(actions) => {
                debug!("{:?} -> {:?}", cmd.command, self.lifecycle.state());
                self.perform(&actions);
                self.emit_state();
                self.reply(cmd.client, Ok(self.lifecycle.state()));
            }
            Err(e) => self.reply(cmd.client, Err(e)),
        }
    }

    fn reply(&mut self, client: Option<ClientId>, result: Result<DaemonState, crate::lifecycle::StateError>) {
        self.emit(AcqEvent::CommandResult { client, result });
    }

    fn perform(&mut self, actions: &[Action]) {
        for action in actions {
            match *action {
                Action::Send(cmd) => self.send(cmd),
                Action::ArmAnchor => {
                    self.anchor_armed = true;
                    self.decoder.reset_alignment();
                    self.last_rx = self.clock.now();
                }
                Action::DropAnchor => self.anchor_armed = false,
                Action::BeginBackoff => {
                    self.drop_link();
                    self.next_attempt = self.clock.now() + self.backoff;
                }
                Action::Handshake => self.begin_handshake(),
                Action::AutoRestart => self.restart_pending = true,
            }
        }
    }

    fn send(&mut self, cmd: DeviceCommand) {
        let Some(link) = self.link.as_mut() else { return };
        if let Err(e) = link.send(&[cmd.byte()]) {
            self.link_lost(e);
        }
    }

    fn begin_handshake(&mut self) {
        self.banner_tail.clear();
        self.handshake = Handshake::AwaitBanner {
            deadline: self.clock.now() + self.cfg.banner_timeout,
        };
        self.send(DeviceCommand::SoftReset);
    }

    fn drop_link(&mut self) {
        self.link = None;
        self.discarded_before += self.decoder.discarded_bytes();
        self.decoder = DecoderState::new();
        self.handshake = Handshake::Done;
        self.anchor_armed = false;
    }

    fn link_lost(&mut self, e: TransportError) {
        if self.link.is_none() {
            return;
        }
        warn!("link to {} lost: {e}", self.connector.describe());
        self.link = None;
        let actions = self
            .lifecycle
            .apply(Event::TransportClosed)
            .expect("closure is valid in every state");
        self.perform(&actions);
        self.emit_state();
    }

    fn try_reconnect(&mut self) {
        let now = self.clock.now();
        if now < self.next_attempt {
            self.clock.sleep((self.next_attempt - now).min(self.cfg.poll * 5));
            return;
        }
        match self.connector.connect() {
            Ok(link) => {
                info!("reconnected to {}", self.connector.describe());
                self.link = Some(link);
                self.reconnects += 1;
                self.backoff = self.cfg.backoff_min;
                self.last_rx = self.clock.now();
                let actions = self
                    .lifecycle
                    .apply(Event::Reconnected)
                    .expect("only reconnecting while the device is lost");
                self.perform(&actions);
                self.emit_state();
            }
            Err(e) => {
                self.backoff = (self.backoff * 2).min(self.cfg.backoff_max);
                debug!("reconnect failed ({e}), next try in {:?}", self.backoff);
                self.next_attempt = now + self.backoff;
            }
        }
    }
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    hay.windows(needle.len()).any(|w| w == needle)
}
