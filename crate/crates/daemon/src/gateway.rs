//! Client gateway: newline-delimited JSON over TCP and the same messages
//! over WebSocket. A single hub task owns every subscription and per-client
//! queue; connection tasks only move bytes.

use crate::messages::{AcqCommand, ClientId, Outbound, Request};
use crate::protocol::{parse_client, ClientMessage, ErrorCode, ServerMessage, StreamKind, WelcomeConfig};
use cyton_core::clock::Clock;
use cyton_core::spsc::{Consumer, Producer};
use futures_util::{SinkExt, StreamExt};
use log::{debug, info, warn};
use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tokio::io::{AsyncBufReadExt, AsyncReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio_tungstenite::tungstenite::Message;

const MAX_LINE: usize = 64 * 1024;
const MAX_QUEUED_MESSAGES: usize = 4096;
const SEND_BUFFER: usize = 16 * 1024;
const WRITE_TIMEOUT: Duration = Duration::from_secs(10);
const TICK: Duration = Duration::from_millis(1);

#[derive(Debug, Clone)]
pub struct GatewaySettings {
    pub welcome: WelcomeConfig,
    pub max_queue_seconds: f64,
}

impl GatewaySettings {
    fn rate(&self, stream: StreamKind) -> f64 {
        match stream {
            StreamKind::Resampled => self.welcome.resampled_rate,
            _ => self.welcome.effective_rate,
        }
    }
}

pub struct GatewayQueues {
    pub commands: Producer<AcqCommand>,
    pub requests: Producer<Request>,
    pub from_processing: Consumer<Outbound>,
    pub from_worker: Consumer<Outbound>,
}

/// Serve until `stop` is set. Blocks the calling thread.
pub fn run(
    tcp: std::net::TcpListener,
    ws: std::net::TcpListener,
    settings: GatewaySettings,
    queues: GatewayQueues,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
) -> std::io::Result<()> {
    tcp.set_nonblocking(true)?;
    ws.set_nonblocking(true)?;
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build()?;
    rt.block_on(async move {
        let tcp = TcpListener::from_std(tcp)?;
        let ws = TcpListener::from_std(ws)?;
        let (hub_tx, hub_rx) = mpsc::unbounded_channel();
        let ids = Arc::new(std::sync::atomic::AtomicU64::new(1));
        tokio::spawn(accept_loop(tcp, false, hub_tx.clone(), clock.clone(), ids.clone()));
        tokio::spawn(accept_loop(ws, true, hub_tx, clock, ids));
        Hub::new(settings, queues).run(hub_rx, stop).await;
        Ok(())
    })
}

enum HubEvent {
    Connected { id: ClientId, handle: ClientHandle },
    Message { id: ClientId, msg: ClientMessage, received: Duration },
    Malformed { id: ClientId, detail: String },
    Gone { id: ClientId },
}

enum Out {
    Line { text: Arc<str>, frames: usize },
    /// Final message; everything still queued in front of it is dropped if
    /// the client was evicted.
    Close(Arc<str>),
}

struct ClientHandle {
    tx: mpsc::UnboundedSender<Out>,
    queued_frames: Arc<AtomicUsize>,
    queued_messages: Arc<AtomicUsize>,
    evicted: Arc<AtomicBool>,
}

struct Client {
    handle: ClientHandle,
    subs: HashMap<StreamKind, Option<Vec<usize>>>,
    closing: bool,
}

impl Client {
    fn send(&self, text: Arc<str>, frames: usize) {
        self.handle.queued_frames.fetch_add(frames, Ordering::Relaxed);
        self.handle.queued_messages.fetch_add(1, Ordering::Relaxed);
        if self.handle.tx.send(Out::Line { text, frames }).is_err() {
            self.handle.queued_frames.fetch_sub(frames, Ordering::Relaxed);
            self.handle.queued_messages.fetch_sub(1, Ordering::Relaxed);
        }
    }

    fn close_with(&mut self, msg: &ServerMessage) {
        self.closing = true;
        self.subs.clear();
        let _ = self.handle.tx.send(Out::Close(msg.to_line().into()));
    }
}

struct Hub {
    settings: GatewaySettings,
    queues: GatewayQueues,
    clients: HashMap<ClientId, Client>,
}

impl Hub {
    fn new(settings: GatewaySettings, queues: GatewayQueues) -> Self {
        Hub {
            settings,
            queues,
            clients: HashMap::new(),
        }
    }

    async fn run(mut self, mut events: mpsc::UnboundedReceiver<HubEvent>, stop: Arc<AtomicBool>) {
        let mut tick = tokio::time::interval(TICK);
        tick.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                ev = events.recv() => match ev {
                    Some(ev) => self.on_event(ev),
                    None => break,
                },
                _ = tick.tick() => {
                    if stop.load(Ordering::Relaxed) {
                        break;
                    }
                    self.pump();
                }
            }
        }
        let bye = ServerMessage::error(ErrorCode::Busy, "daemon shutting down");
        for c in self.clients.values_mut() {
            c.close_with(&bye);
        }
        // let the writers deliver the goodbye
        tokio::time::sleep(Duration::from_millis(50)).await;
    }

    fn pump(&mut self) {
        while let Some(out) = self.queues.from_processing.pop() {
            self.dispatch(out);
        }
        while let Some(out) = self.queues.from_worker.pop() {
            self.dispatch(out);
        }
    }

    fn dispatch(&mut self, out: Outbound) {
        match out {
            Outbound::To { client, msg } => self.reply(client, &msg),
            Outbound::Broadcast(msg) => {
                if let ServerMessage::Data { stream, .. } = &msg {
                    self.fan_out(*stream, &msg);
                } else {
                    let line: Arc<str> = msg.to_line().into();
                    for c in self.clients.values().filter(|c| !c.closing) {
                        c.send(line.clone(), 0);
                    }
                }
                self.evict_slow();
            }
        }
    }

    fn fan_out(&mut self, stream: StreamKind, msg: &ServerMessage) {
        let ServerMessage::Data {
            first_index,
            frames,
            interpolated,
            ..
        } = msg
        else {
            return;
        };
        let mut full: Option<Arc<str>> = None;
        for c in self.clients.values() {
            let Some(channels) = c.subs.get(&stream) else { continue };
            let line = match channels {
                None => full.get_or_insert_with(|| msg.to_line().into()).clone(),
                Some(chs) => {
                    let subset = ServerMessage::Data {
                        stream,
                        first_index: *first_index,
                        frames: frames.iter().map(|f| chs.iter().map(|&ch| f[ch]).collect()).collect(),
                        interpolated: interpolated.clone(),
                    };
                    subset.to_line().into()
                }
            };
            c.send(line, frames.len());
        }
    }

    fn evict_slow(&mut self) {
        let max_s = self.settings.max_queue_seconds;
        for (id, c) in self.clients.iter_mut().filter(|(_, c)| !c.closing) {
            let budget: f64 = c.subs.keys().map(|s| max_s * self.settings.rate(*s)).sum();
            let frames = c.handle.queued_frames.load(Ordering::Relaxed);
            let messages = c.handle.queued_messages.load(Ordering::Relaxed);
            if (budget > 0.0 && frames as f64 > budget) || messages > MAX_QUEUED_MESSAGES {
                warn!("client {id} fell {frames} frames behind, evicting");
                c.handle.evicted.store(true, Ordering::Relaxed);
                let detail = format!("client fell behind by more than {max_s} s of data");
                c.close_with(&ServerMessage::error(ErrorCode::Overflow, detail));
            }
        }
    }

    fn reply(&self, id: ClientId, msg: &ServerMessage) {
        if let Some(c) = self.clients.get(&id).filter(|c| !c.closing) {
            c.send(msg.to_line().into(), msg.frame_count());
        }
    }

    fn on_event(&mut self, ev: HubEvent) {
        match ev {
            HubEvent::Connected { id, handle } => {
                debug!("client {id} connected");
                self.clients.insert(
                    id,
                    Client {
                        handle,
                        subs: HashMap::new(),
                        closing: false,
                    },
                );
            }
            HubEvent::Gone { id } => {
                debug!("client {id} gone");
                self.clients.remove(&id);
            }
            HubEvent::Malformed { id, detail } => {
                if let Some(c) = self.clients.get_mut(&id) {
                    c.close_with(&ServerMessage::error(ErrorCode::Protocol, detail));
                }
            }
            HubEvent::Message { id, msg, received } => {
                if self.clients.get(&id).is_some_and(|c| !c.closing) {
                    self.on_message(id, msg, received);
                }
            }
        }
    }

    fn request(&mut self, client: ClientId, req: Request) {
        if self.queues.requests.push(req).is_err() {
            self.reply(client, &ServerMessage::error(ErrorCode::Busy, "processing queue full"));
        }
    }

    fn on_message(&mut self, id: ClientId, msg: ClientMessage, received: Duration) {
        match msg {
            ClientMessage::Hello { .. } => {
                let config = self.settings.welcome.clone();
                self.reply(id, &ServerMessage::Welcome { config });
            }
            ClientMessage::Ping { nonce } => self.reply(id, &ServerMessage::Pong { nonce }),
            ClientMessage::Command { command } => {
                let cmd = AcqCommand {
                    client: Some(id),
                    command,
                };
                if self.queues.commands.push(cmd).is_err() {
                    self.reply(id, &ServerMessage::error(ErrorCode::Busy, "command queue full"));
                }
            }
            ClientMessage::Subscribe { stream, channels } => {
                let n = self.settings.welcome.n_channels;
                if stream == StreamKind::Resampled && !self.settings.welcome.resample {
                    return self.reply(id, &ServerMessage::error(ErrorCode::InvalidRequest, "resampling is disabled"));
                }
                if let Some(chs) = &channels {
                    if chs.is_empty() || chs.iter().any(|&c| c >= n) {
                        let detail = format!("channels must be a non-empty subset of 0..{n}");
                        return self.reply(id, &ServerMessage::error(ErrorCode::InvalidRequest, detail));
                    }
                }
                if let Some(c) = self.clients.get_mut(&id) {
                    c.subs.insert(stream, channels);
                }
                self.request(id, Request::Status { client: id });
            }
            ClientMessage::Unsubscribe { stream } => {
                if let Some(c) = self.clients.get_mut(&id) {
                    c.subs.remove(&stream);
                }
                self.request(id, Request::Status { client: id });
            }
            ClientMessage::Tag { label, client_time } => self.request(
                id,
                Request::Tag {
                    client: id,
                    label,
                    client_time,
                    received,
                },
            ),
            ClientMessage::RequestEpoch { tag_id, window, stream } => self.request(
                id,
                Request::Epoch {
                    client: id,
                    tag_id,
                    window,
                    stream,
                },
            ),
            ClientMessage::RequestBandPower { band, window_s, stream } => self.request(
                id,
                Request::BandPower {
                    client: id,
                    band,
                    window_s,
                    stream,
                },
            ),
            ClientMessage::RequestAverage { label, window, stream } => self.request(
                id,
                Request::Average {
                    client: id,
                    label,
                    window,
                    stream,
                },
            ),
        }
    }
}

async fn accept_loop(
    listener: TcpListener,
    websocket: bool,
    hub: mpsc::UnboundedSender<HubEvent>,
    clock: Arc<dyn Clock>,
    ids: Arc<std::sync::atomic::AtomicU64>,
) {
    loop {
        let (stream, peer) = match listener.accept().await {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                tokio::time::sleep(Duration::from_millis(50)).await;
                continue;
            }
        };
        let sock = socket2::SockRef::from(&stream);
        let _ = sock.set_send_buffer_size(SEND_BUFFER);
        let _ = stream.set_nodelay(true);
        let id = ids.fetch_add(1, Ordering::Relaxed);
        info!("client {id} from {peer} ({})", if websocket { "websocket" } else { "tcp" });
        let hub = hub.clone();
        let clock = clock.clone();
        tokio::spawn(async move {
            if websocket {
                match tokio_tungstenite::accept_async(stream).await {
                    Ok(ws) => serve_ws(id, ws, hub, clock).await,
                    Err(e) => debug!("websocket handshake with {peer} failed: {e}"),
                }
            } else {
                serve_tcp(id, stream, hub, clock).await;
            }
        });
    }
}

fn register(id: ClientId, hub: &mpsc::UnboundedSender<HubEvent>) -> (mpsc::UnboundedReceiver<Out>, Counters) {
    let (tx, rx) = mpsc::unbounded_channel();
    let counters = Counters {
        frames: Arc::new(AtomicUsize::new(0)),
        messages: Arc::new(AtomicUsize::new(0)),
        evicted: Arc::new(AtomicBool::new(false)),
    };
    let handle = ClientHandle {
        tx,
        queued_frames: counters.frames.clone(),
        queued_messages: counters.messages.clone(),
        evicted: counters.evicted.clone(),
    };
    let _ = hub.send(HubEvent::Connected { id, handle });
    (rx, counters)
}

struct Counters {
    frames: Arc<AtomicUsize>,
    messages: Arc<AtomicUsize>,
    evicted: Arc<AtomicBool>,
}

type WsStream = tokio_tungstenite::WebSocketStream<TcpStream>;

enum Sink {
    Tcp(tokio::net::tcp::OwnedWriteHalf),
    Ws(futures_util::stream::SplitSink<WsStream, Message>),
}

impl Sink {
    async fn send_line(&mut self, line: &str) -> std::io::Result<()> {
        match self {
            Sink::Tcp(w) => w.write_all(line.as_bytes()).await,
            Sink::Ws(w) => w
                .send(Message::text(line.trim_end()))
                .await
                .map_err(std::io::Error::other),
        }
    }

    async fn finish(&mut self) {
        match self {
            Sink::Tcp(w) => {
                let _ = w.shutdown().await;
            }
            Sink::Ws(w) => {
                let _ = w.close().await;
            }
        }
    }
}

/// Write queued messages until the hub closes the client or the peer stops
/// reading for too long.
async fn write_loop(mut sink: Sink, mut rx: mpsc::UnboundedReceiver<Out>, counters: Counters) {
    while let Some(out) = rx.recv().await {
        match out {
            Out::Line { text, frames } => {
                counters.frames.fetch_sub(frames, Ordering::Relaxed);
                counters.messages.fetch_sub(1, Ordering::Relaxed);
                if counters.evicted.load(Ordering::Relaxed) {
                    continue;
                }
                match tokio::time::timeout(WRITE_TIMEOUT, sink.send_line(&text)).await {
                    Ok(Ok(())) => {}
                    _ => return,
                }
            }
            Out::Close(text) => {
                let _ = tokio::time::timeout(WRITE_TIMEOUT, sink.send_line(&text)).await;
                sink.finish().await;
                return;
            }
        }
    }
}

async fn serve_tcp(id: ClientId, stream: TcpStream, hub: mpsc::UnboundedSender<HubEvent>, clock: Arc<dyn Clock>) {
    let (read, write) = stream.into_split();
    let (rx, counters) = register(id, &hub);
    let reader = {
        let hub = hub.clone();
        async move {
            let mut reader = BufReader::new(read);
            let mut line = String::new();
            loop {
                line.clear();
                let res = (&mut reader).take(MAX_LINE as u64 + 1).read_line(&mut line).await;
                match res {
                    Ok(0) | Err(_) => break,
                    Ok(_) if !line.ends_with('\n') && line.len() > MAX_LINE => {
                        let _ = hub.send(HubEvent::Malformed {
                            id,
                            detail: format!("line longer than {MAX_LINE} bytes"),
                        });
                        break;
                    }
                    Ok(_) => {
                        if line.trim().is_empty() {
                            continue;
                        }
                        if !forward(id, &line, &hub, clock.as_ref()) {
                            break;
                        }
                    }
                }
            }
        }
    };
    run_connection(id, reader, write_loop(Sink::Tcp(write), rx, counters), hub).await;
}

async fn serve_ws(id: ClientId, ws: WsStream, hub: mpsc::UnboundedSender<HubEvent>, clock: Arc<dyn Clock>) {
    let (sink, mut stream) = ws.split();
    let (rx, counters) = register(id, &hub);
    let reader = {
        let hub = hub.clone();
        async move {
            while let Some(msg) = stream.next().await {
                match msg {
                    Ok(Message::Text(text)) => {
                        let mut ok = true;
                        for line in text.lines().filter(|l| !l.trim().is_empty()) {
                            ok = forward(id, line, &hub, clock.as_ref());
                            if !ok {
                                break;
                            }
                        }
                        if !ok {
                            break;
                        }
                    }
                    Ok(Message::Binary(_)) => {
                        let _ = hub.send(HubEvent::Malformed {
                            id,
                            detail: "binary frames are not part of the protocol".into(),
                        });
                        break;
                    }
                    Ok(Message::Close(_)) | Err(_) => break,
                    Ok(_) => {}
                }
            }
        }
    };
    run_connection(id, reader, write_loop(Sink::Ws(sink), rx, counters), hub).await;
}

/// Parse one message and hand it to the hub. False after a protocol error.
fn forward(id: ClientId, text: &str, hub: &mpsc::UnboundedSender<HubEvent>, clock: &dyn Clock) -> bool {
    let received = clock.now();
    match parse_client(text) {
        Ok(msg) => {
            let _ = hub.send(HubEvent::Message { id, msg, received });
            true
        }
        Err(e) => {
            let _ = hub.send(HubEvent::Malformed { id, detail: e.to_string() });
            false
        }
    }
}

/// The connection lives as long as its writer. A finished reader (peer hung
/// up or sent garbage) tells the hub, which then closes the writer.
async fn run_connection(
    id: ClientId,
    reader: impl std::future::Future<Output = ()>,
    writer: impl std::future::Future<Output = ()>,
    hub: mpsc::UnboundedSender<HubEvent>,
) {
    let reader = async {
        reader.await;
        let _ = hub.send(HubEvent::Gone { id });
        std::future::pending::<()>().await;
    };
    tokio::select! {
        _ = reader => {}
        _ = writer => {}
    }
    let _ = hub.send(HubEvent::Gone { id });
}
