//! Network front for sessions. Two transports share one registry:
//! WebSocket frames on `/session` (one wire line per text frame) and plain
//! TCP with newline-delimited lines.
//!
//! Each connection gets its own task running [`Server::run_session`]; the
//! registry is the only state shared between them.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::mpsc;
use tokio::time::Instant;

use duplex_core::sim::Scenario;
use duplex_core::SessionConfig;

use crate::session::{ClockMode, Session, SessionHandle, VoteRecord};
use crate::trace::{Direction, TraceLine, TraceWriter};
use crate::wire::{decode_message, encode_message, WireKind, WireMessage};

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub mode: ClockMode,
    pub config: SessionConfig,
    /// Scripted backends every session is wired to.
    pub scenario: Scenario,
    /// Trace file of the first session; later sessions get `-<id>` before the extension.
    pub record: Option<PathBuf>,
    pub votes: Option<PathBuf>,
}

impl ServerOptions {
    pub fn new(mode: ClockMode, config: SessionConfig) -> Self {
        ServerOptions {
            mode,
            config,
            scenario: Scenario::default(),
            record: None,
            votes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionInfo {
    pub id: u64,
    pub transport: &'static str,
    pub inbound: u64,
    pub outbound: u64,
    pub open: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SessionOutcome {
    pub id: u64,
    pub inbound: u64,
    pub outbound: u64,
    /// Ended by a fatal protocol error rather than by the client.
    pub protocol_closed: bool,
    pub votes: usize,
}

struct Shared {
    opts: ServerOptions,
    next_id: AtomicU64,
    registry: Mutex<BTreeMap<u64, SessionInfo>>,
    votes: Mutex<()>,
}

#[derive(Clone)]
pub struct Server {
    shared: Arc<Shared>,
}

pub fn trace_path(base: &Path, id: u64) -> PathBuf {
    if id == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}-{id}.{}", ext.to_string_lossy()),
        None => format!("{stem}-{id}"),
    };
    base.with_file_name(name)
}

/// Line output of one session: to the client while it listens, and to the
/// trace file if recording.
struct Outlet {
    tx: Option<mpsc::Sender<String>>,
    trace: Option<TraceWriter<BufWriter<File>>>,
    sent: u64,
}

impl Outlet {
    async fn send(&mut self, msgs: Vec<WireMessage>) {
        for m in msgs {
            let line = match encode_message(&m) {
                Ok(l) => l,
                Err(_) => continue,
            };
            self.record(Direction::Out, m.t_ms, &line);
            self.sent += 1;
            if let Some(tx) = &self.tx {
                if tx.send(line).await.is_err() {
                    self.tx = None;
                }
            }
        }
    }

    fn record(&mut self, dir: Direction, t_ms: u64, line: &str) {
        if let Some(w) = &mut self.trace {
            if w.write(&TraceLine::new(dir, t_ms, line)).is_err() {
                self.trace = None;
            }
        }
    }
}

impl Server {
    pub fn new(opts: ServerOptions) -> Self {
        Server {
            shared: Arc::new(Shared {
                opts,
                next_id: AtomicU64::new(1),
                registry: Mutex::new(BTreeMap::new()),
                votes: Mutex::new(()),
            }),
        }
    }

    pub fn options(&self) -> &ServerOptions {
        &self.shared.opts
    }

    pub fn sessions(&self) -> Vec<SessionInfo> {
        self.shared.registry.lock().unwrap().values().cloned().collect()
    }

    fn update(&self, id: u64, f: impl FnOnce(&mut SessionInfo)) {
        if let Some(info) = self.shared.registry.lock().unwrap().get_mut(&id) {
            f(info);
        }
    }

    fn append_votes(&self, votes: &[VoteRecord]) -> io::Result<()> {
        let Some(path) = &self.shared.opts.votes else {
            return Ok(());
        };
        let _guard = self.shared.votes.lock().unwrap();
        let mut f = OpenOptions::new().create(true).append(true).open(path)?;
        for v in votes {
            let line = serde_json::to_string(v).map_err(io::Error::other)?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }

    /// Drives one session until the inbound stream ends or the protocol
    /// closes it. Lines go out on `tx`; `tx` may be dropped by the transport
    /// at any time.
    pub async fn run_session(
        self,
        mut rx: mpsc::Receiver<String>,
        tx: mpsc::Sender<String>,
        transport: &'static str,
    ) -> SessionOutcome {
        let opts = &self.shared.opts;
        let id = self.shared.next_id.fetch_add(1, Ordering::Relaxed);
        self.shared.registry.lock().unwrap().insert(
            id,
            SessionInfo {
                id,
                transport,
                inbound: 0,
                outbound: 0,
                open: true,
            },
        );
        let trace = opts.record.as_ref().and_then(|base| {
            let file = File::create(trace_path(base, id)).ok()?;
            let mut w = TraceWriter::new(BufWriter::new(file));
            w.comment(&format!("session {id} transport {transport} mode {:?}", opts.mode).to_lowercase())
                .ok()?;
            Some(w)
        });
        let mut out = Outlet {
            tx: Some(tx),
            trace,
            sent: 0,
        };
        let mut outcome = SessionOutcome {
            id,
            inbound: 0,
            outbound: 0,
            protocol_closed: false,
            votes: 0,
        };
        let handle = SessionHandle {
            id,
            config: opts.config.clone(),
            mode: opts.mode,
        };
        let mut session = match Session::new(handle, &opts.scenario) {
            Ok(s) => s,
            Err(e) => {
                let msg = WireMessage::new(WireKind::Error, 0, serde_json::json!({"code": "setup", "message": e.to_string()}))
                    .with_seq(1);
                out.send(vec![msg]).await;
                self.update(id, |i| i.open = false);
                outcome.outbound = out.sent;
                return outcome;
            }
        };
        let start = Instant::now();
        let now = || start.elapsed().as_millis() as u64;
        loop {
            // an event due at d fires once d has fully passed, so input in that same ms still wins the tie
            let deadline = match opts.mode {
                ClockMode::Live => session.next_deadline().map(|d| start + Duration::from_millis(d + 1)),
                ClockMode::Sim => None,
            };
            tokio::select! {
                line = rx.recv() => {
                    let Some(line) = line else { break };
                    let n = now();
                    let early = session.catch_up(&line, n);
                    out.send(early).await;
                    let t_in = match opts.mode {
                        ClockMode::Sim => decode_message(&line).map(|m| m.t_ms).unwrap_or(session.pipeline().now_ms()),
                        ClockMode::Live => n,
                    };
                    out.record(Direction::In, t_in, &line);
                    outcome.inbound += 1;
                    let step = session.receive(&line, n);
                    if !step.votes.is_empty() {
                        outcome.votes += step.votes.len();
                        let _ = self.append_votes(&step.votes);
                    }
                    out.send(step.out).await;
                    let (i, o) = (outcome.inbound, out.sent);
                    self.update(id, |info| {
                        info.inbound = i;
                        info.outbound = o;
                    });
                    if step.close {
                        outcome.protocol_closed = true;
                        break;
                    }
                }
                _ = async { tokio::time::sleep_until(deadline.unwrap()).await }, if deadline.is_some() => {
                    let msgs = session.advance_to(now().saturating_sub(1));
                    out.send(msgs).await;
                }
            }
        }
        if !outcome.protocol_closed {
            // input is over; whatever the session still owes goes out while the client listens
            let rest = session.settle();
            out.send(rest).await;
        }
        outcome.outbound = out.sent;
        let o = out.sent;
        self.update(id, |info| {
            info.outbound = o;
            info.open = false;
        });
        outcome
    }

    pub fn router(&self) -> Router {
        Router::new()
            .route("/session", get(ws_upgrade))
            .route("/health", get(|| async { "ok" }))
            .route("/sessions", get(list_sessions))
            .with_state(self.clone())
    }

    pub async fn serve_ws(self, listener: TcpListener) -> io::Result<()> {
        axum::serve(listener, self.router()).await
    }

    pub async fn serve_tcp(self, listener: TcpListener) -> io::Result<()> {
        loop {
            let (sock, _) = listener.accept().await?;
            let server = self.clone();
            tokio::spawn(async move { server.handle_tcp(sock).await });
        }
    }

    pub async fn handle_tcp(self, sock: TcpStream) -> SessionOutcome {
        let (r, mut w) = sock.into_split();
        let (in_tx, in_rx) = mpsc::channel::<String>(64);
        let (out_tx, mut out_rx) = mpsc::channel::<String>(256);
        let session = tokio::spawn(self.run_session(in_rx, out_tx, "tcp"));
        let reader = async move {
            let mut lines = BufReader::new(r).lines();
            loop {
                tokio::select! {
                    line = lines.next_line() => match line {
                        Ok(Some(l)) => if in_tx.send(l).await.is_err() { break },
                        _ => break,
                    },
                    _ = in_tx.closed() => break,
                }
            }
        };
        let writer = async move {
            while let Some(line) = out_rx.recv().await {
                if w.write_all(line.as_bytes()).await.is_err() {
                    break;
                }
            }
            let _ = w.shutdown().await;
        };
        tokio::join!(reader, writer);
        session.await.expect("session task")
    }

    pub async fn handle_socket(self, socket: WebSocket) -> SessionOutcome {
        let (mut sink, mut stream) = socket.split();
        let (in_tx, in_rx) = mpsc::channel::<String>(64);
        let (out_tx, mut out_rx) = mpsc::channel::<String>(256);
        let session = tokio::spawn(self.run_session(in_rx, out_tx, "ws"));
        let reader = async move {
            loop {
                tokio::select! {
                    msg = stream.next() => {
                        let text = match msg {
                            Some(Ok(Message::Text(t))) => t.as_str().to_string(),
                            Some(Ok(Message::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                            Some(Ok(Message::Ping(_) | Message::Pong(_))) => continue,
                            _ => break,
                        };
                        for line in text.lines().filter(|l| !l.trim().is_empty()) {
                            if in_tx.send(line.to_string()).await.is_err() {
                                return;
                            }
                        }
                    }
                    _ = in_tx.closed() => break,
                }
            }
        };
        let writer = async move {
            while let Some(line) = out_rx.recv().await {
                if sink.send(Message::Text(line.into())).await.is_err() {
                    return;
                }
            }
            let _ = sink.close().await;
        };
        tokio::join!(reader, writer);
        session.await.expect("session task")
    }
}

async fn ws_upgrade(State(server): State<Server>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| async move {
        server.handle_socket(socket).await;
    })
}

async fn list_sessions(State(server): State<Server>) -> impl IntoResponse {
    Json(server.sessions())
}
