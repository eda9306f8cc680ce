//! WebSocket play server.
//!
//! Per connection: a generation thread starts at volume 0 and pushes
//! 128-sample blocks into a small queue; the connection thread forwards
//! them as 256-byte binary frames and applies JSON control messages as
//! they arrive. Messages from the client:
//!
//! ```text
//! {"type":"set","pitch":0.5,"volume":0.7,"instrument":0.0}   any field may be omitted
//! {"type":"ping"}  {"type":"probe_on"}  {"type":"probe_off"}
//! ```
//!
//! Messages to the client: `pong`, `warn` (a value was clamped), `error`
//! (unparseable message; the connection stays open), `stats` (every
//! `stats_every` blocks) and `act` (last-layer activations after every
//! eighth block while probing).

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, TryRecvError};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use transientsynth_core::generate::{ControlSchedule, Controls};
use transientsynth_core::nn::NetworkParams;
use tungstenite::{Message, WebSocket};

use crate::error::{IoContext, Result};
use crate::stream::{self, BlockSource, ControlCell, ControlSource, StreamOptions, StreamStats};

pub const DEFAULT_PORT: u16 = 7340;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ControlMessage {
    Set { pitch: Option<f64>, volume: Option<f64>, instrument: Option<f64> },
    Ping,
    ProbeOn,
    ProbeOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Pong,
    Warn { message: String },
    Error { message: String },
    Stats { blocks: u64, dropped: u64, underruns: u64 },
    Act { layer: usize, values: Vec<f32> },
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub prime_seed: u64,
    /// Pace blocks to real time. Off gives a deterministic, as-fast-as-
    /// possible stream for tests.
    pub paced: bool,
    /// Drive controls from a fixed schedule instead of client messages.
    pub script: Option<ControlSchedule>,
    /// Close the connection after this many blocks.
    pub max_blocks: Option<u64>,
    pub stats_every: u64,
    pub queue: usize,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions { prime_seed: 0, paced: true, script: None, max_blocks: None, stats_every: 125, queue: 8 }
    }
}

/// Clamps a `set` onto the current controls, listing every clamped field.
pub fn apply_set(current: Controls, pitch: Option<f64>, volume: Option<f64>, instrument: Option<f64>) -> (Controls, Vec<String>) {
    let mut warnings = Vec::new();
    let mut fix = |name: &str, v: Option<f64>, old: f64| match v {
        None => old,
        Some(x) => {
            let c = x.clamp(0.0, 1.0);
            if c != x {
                warnings.push(format!("{name} {x} clamped to {c}"));
            }
            c
        }
    };
    let next = Controls {
        pitch: fix("pitch", pitch, current.pitch),
        volume: fix("volume", volume, current.volume),
        instrument: fix("instrument", instrument, current.instrument),
    };
    (next, warnings)
}

fn send_json(ws: &mut WebSocket<TcpStream>, m: &ServerMessage) -> Result<()> {
    let text = serde_json::to_string(m).expect("server messages serialize");
    ws.send(Message::Text(text))?;
    Ok(())
}

fn handle_text(ws: &mut WebSocket<TcpStream>, cell: &ControlCell, text: &str) -> Result<()> {
    match serde_json::from_str::<ControlMessage>(text) {
        Ok(ControlMessage::Set { pitch, volume, instrument }) => {
            let (next, warnings) = apply_set(cell.get(), pitch, volume, instrument);
            cell.set(next);
            for message in warnings {
                send_json(ws, &ServerMessage::Warn { message })?;
            }
        }
        Ok(ControlMessage::Ping) => send_json(ws, &ServerMessage::Pong)?,
        Ok(ControlMessage::ProbeOn) => cell.probe.store(true, Ordering::Relaxed),
        Ok(ControlMessage::ProbeOff) => cell.probe.store(false, Ordering::Relaxed),
        Err(e) => send_json(ws, &ServerMessage::Error { message: format!("bad control message: {e}") })?,
    }
    Ok(())
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

/// Serves one client until it disconnects or the stream ends.
pub fn handle_connection(tcp: TcpStream, params: Arc<NetworkParams>, opts: &ServeOptions, shutdown: &AtomicBool) -> Result<()> {
    let peer = tcp.peer_addr().ok();
    tcp.set_nodelay(true).ok();
    let mut ws = tungstenite::accept(tcp).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::Io(io::ErrorKind::WouldBlock.into()),
    })?;
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2))).ok();
    log::info!("client connected: {peer:?}");

    let cell = Arc::new(ControlCell::new(Controls::SILENT));
    let source = match &opts.script {
        Some(s) => ControlSource::Script(s.clone()),
        None => ControlSource::Live(cell.clone()),
    };
    let stats = Arc::new(StreamStats::default());
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = sync_channel(opts.queue.max(1));
    let gen = {
        let (cell, stats, stop) = (cell.clone(), stats.clone(), stop.clone());
        let block_source = BlockSource::new(params.clone(), opts.prime_seed, source);
        let sopts = StreamOptions { paced: opts.paced, max_blocks: opts.max_blocks, probe_every: 8 };
        std::thread::spawn(move || stream::run(block_source, Some(&cell.probe), tx, &stop, &stats, sopts))
    };

    let n_layers = params.config().n_layers;
    let mut sent = 0u64;
    let result = (|| -> Result<()> {
        loop {
            if shutdown.load(Ordering::Relaxed) {
                ws.close(None).ok();
                return Ok(());
            }
            match ws.read() {
                Ok(Message::Text(t)) => handle_text(&mut ws, &cell, &t)?,
                Ok(Message::Binary(_)) => send_json(&mut ws, &ServerMessage::Error { message: "binary frames are not accepted".into() })?,
                Ok(Message::Close(_)) => return Ok(()),
                Ok(_) => {}
                Err(e) if is_timeout(&e) => {}
                Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
                Err(e) => return Err(e.into()),
            }
            loop {
                match rx.try_recv() {
                    Ok(block) => {
                        ws.send(Message::Binary(block.to_bytes()))?;
                        if let Some(values) = block.activations {
                            send_json(&mut ws, &ServerMessage::Act { layer: n_layers, values })?;
                        }
                        sent += 1;
                        if opts.stats_every > 0 && sent % opts.stats_every == 0 {
                            send_json(&mut ws, &stats_message(&stats))?;
                        }
                    }
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => {
                        send_json(&mut ws, &stats_message(&stats))?;
                        ws.close(None).ok();
                        // let the close handshake finish
                        for _ in 0..50 {
                            match ws.read() {
                                Err(e) if is_timeout(&e) => continue,
                                _ => break,
                            }
                        }
                        return Ok(());
                    }
                }
            }
        }
    })();
    stop.store(true, Ordering::Relaxed);
    drop(rx);
    let gen_result = gen.join().expect("generation thread panicked");
    log::info!("client {peer:?} finished after {sent} blocks");
    result.and(gen_result)
}

fn stats_message(s: &StreamStats) -> ServerMessage {
    ServerMessage::Stats {
        blocks: s.blocks.load(Ordering::Relaxed),
        dropped: s.dropped.load(Ordering::Relaxed),
        underruns: s.underruns.load(Ordering::Relaxed),
    }
}

/// A server running on a background thread.
pub struct ServerHandle {
    pub addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn stop(mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            t.join().ok();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::Relaxed);
    }
}

/// Accepts connections until `shutdown` is set; one thread per client.
pub fn serve(listener: TcpListener, params: Arc<NetworkParams>, opts: ServeOptions, shutdown: Arc<AtomicBool>) -> Result<()> {
    let addr = listener.local_addr().at("listener")?;
    listener.set_nonblocking(true).at("listener")?;
    log::info!("listening on ws://{addr}");
    let mut clients = Vec::new();
    while !shutdown.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((tcp, _)) => {
                tcp.set_nonblocking(false).at("client socket")?;
                let (params, opts, shutdown) = (params.clone(), opts.clone(), shutdown.clone());
                clients.push(std::thread::spawn(move || {
                    if let Err(e) = handle_connection(tcp, params, &opts, &shutdown) {
                        log::warn!("connection ended with error: {e}");
                    }
                }));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => std::thread::sleep(Duration::from_millis(5)),
            Err(e) => return Err(e).at("listener"),
        }
        clients.retain(|c| !c.is_finished());
    }
    for c in clients {
        c.join().ok();
    }
    Ok(())
}

/// Binds `addr` and serves on a background thread.
pub fn spawn(addr: &str, params: Arc<NetworkParams>, opts: ServeOptions) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).at(addr)?;
    let local = listener.local_addr().at(addr)?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = shutdown.clone();
    let thread = std::thread::spawn(move || {
        if let Err(e) = serve(listener, params, opts, flag) {
            log::error!("server stopped: {e}");
        }
    });
    Ok(ServerHandle { addr: local, shutdown, thread: Some(thread) })
}
