//! Real-time gateway for human-in-the-loop sessions.
//!
//! A single blocking loop owns the [`Session`], paces it to wall-clock time
//! and publishes encoded frames. WebSocket clients only talk to the loop
//! through a command queue; any number may watch, and each played vehicle
//! has at most one controlling client at a time.

pub mod protocol;

use std::collections::HashMap;
use std::future::{Future, IntoFuture};
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::header;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::{Json, Router};
use futures_util::{SinkExt, StreamExt};
use minicar_core::config::ScenarioConfig;
use minicar_core::error::SimError;
use minicar_core::game::{Command, Session};
use minicar_core::record::{EventType, SimEvent};
use minicar_core::track::PolylineSample;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{broadcast, mpsc, watch};

use protocol::{decode, encode_event, encode_frame, encode_hello, Hello, Incoming, LaneInfo};

/// Spacing of the centerline samples served at `/track`.
pub const TRACK_RESOLUTION: f64 = 0.05;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("scenario has no played vehicle; set vehicles.gamified")]
    NoPlayedVehicle,
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("server error: {0}")]
    Server(#[from] std::io::Error),
    #[error("session loop panicked")]
    LoopPanicked,
}

type ClientId = u64;

enum LoopMsg {
    Connected { client: ClientId, direct: mpsc::UnboundedSender<String> },
    Command { client: ClientId, command: Command },
    Warning { client: ClientId, message: String },
    Disconnected { client: ClientId },
}

#[derive(Clone)]
struct AppState {
    hello: Arc<str>,
    track: Arc<Vec<PolylineSample>>,
    track_csv: Arc<str>,
    frames: broadcast::Sender<Arc<str>>,
    ended: watch::Receiver<bool>,
    to_loop: mpsc::UnboundedSender<LoopMsg>,
    next_client: Arc<AtomicU64>,
}

/// A bound but not yet running gateway.
pub struct Gateway {
    listener: TcpListener,
    session: Session,
    addr: SocketAddr,
}

impl Gateway {
    /// Builds the session and binds the listener. Fails if the scenario has
    /// no played vehicle or the address is taken.
    pub async fn bind(config: ScenarioConfig, addr: SocketAddr) -> Result<Self, GatewayError> {
        if config.vehicles.gamified.is_empty() {
            return Err(GatewayError::NoPlayedVehicle);
        }
        let session = Session::new(config)?;
        let listener = TcpListener::bind(addr).await.map_err(|source| GatewayError::Bind { addr, source })?;
        let addr = listener.local_addr()?;
        Ok(Self { listener, session, addr })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Serves until the scenario duration elapses or `shutdown` resolves,
    /// then returns the session for export and replay.
    pub async fn run_until(self, shutdown: impl Future<Output = ()>) -> Result<Session, GatewayError> {
        let Gateway { listener, session, .. } = self;
        let world = &session.world;
        let hello = Hello {
            scenario: world.config.name.clone(),
            dt: world.config.dt,
            frame_rate: world.config.game.frame_rate,
            vehicle_count: world.agents.len(),
            played: world.config.vehicles.gamified.clone(),
            lanes: world.track.lanes.iter().map(|l| LaneInfo { id: l.id, length: l.length }).collect(),
            track: "/track".into(),
        };
        let (frames, _) = broadcast::channel(64);
        let (ended_tx, ended) = watch::channel(false);
        let (to_loop, from_clients) = mpsc::unbounded_channel();
        let state = AppState {
            hello: encode_hello(&hello).into(),
            track: Arc::new(world.track.sample_polyline(TRACK_RESOLUTION)),
            track_csv: world.track.polyline_csv(TRACK_RESOLUTION).into(),
            frames: frames.clone(),
            ended: ended.clone(),
            to_loop,
            next_client: Arc::new(AtomicU64::new(0)),
        };
        let app = Router::new()
            .route("/ws", get(upgrade))
            .route("/track", get(track_json))
            .route("/track.csv", get(track_csv))
            .with_state(state);

        let stop = Arc::new(AtomicBool::new(false));
        let loop_stop = stop.clone();
        let mut sim =
            tokio::task::spawn_blocking(move || run_loop(session, from_clients, frames, ended_tx, &loop_stop));
        let mut server_ended = ended.clone();
        let server = tokio::spawn(
            axum::serve(listener, app)
                .with_graceful_shutdown(async move {
                    let _ = server_ended.wait_for(|e| *e).await;
                })
                .into_future(),
        );

        let finished = tokio::select! {
            r = &mut sim => Some(r),
            _ = shutdown => None,
        };
        let result = match finished {
            Some(r) => r,
            None => {
                stop.store(true, Ordering::Relaxed);
                sim.await
            }
        };
        let served = server.await;
        let outcome = result.map_err(|_| GatewayError::LoopPanicked)?;
        served.map_err(|_| GatewayError::LoopPanicked)??;
        outcome.map_err(GatewayError::Sim)
    }
}

fn run_loop(
    mut session: Session,
    mut inbox: mpsc::UnboundedReceiver<LoopMsg>,
    frames: broadcast::Sender<Arc<str>>,
    ended: watch::Sender<bool>,
    stop: &AtomicBool,
) -> Result<Session, SimError> {
    let played = session.world.config.vehicles.gamified.clone();
    let dt = Duration::from_secs_f64(session.world.config.dt);
    let mut clients: HashMap<ClientId, mpsc::UnboundedSender<String>> = HashMap::new();
    let mut controller: HashMap<usize, ClientId> = HashMap::new();
    let start = Instant::now();
    let mut stepped: u32 = 0;
    let mut result = Ok(());
    while !session.is_finished() && !stop.load(Ordering::Relaxed) {
        while let Ok(msg) = inbox.try_recv() {
            let warn = |clients: &HashMap<ClientId, mpsc::UnboundedSender<String>>, client, message: String| {
                let w = &session.world;
                let ev = SimEvent::new(w.tick, w.time(), EventType::Warning, None).with_detail(message);
                if let Some(tx) = clients.get(&client) {
                    let _ = tx.send(encode_event(&ev));
                }
            };
            match msg {
                LoopMsg::Connected { client, direct } => {
                    clients.insert(client, direct);
                }
                LoopMsg::Warning { client, message } => warn(&clients, client, message),
                LoopMsg::Command { client, command } => {
                    if played.contains(&command.vehicle) {
                        let owner = *controller.entry(command.vehicle).or_insert(client);
                        if owner != client {
                            warn(
                                &clients,
                                client,
                                format!("vehicle {} is controlled by another client", command.vehicle),
                            );
                            continue;
                        }
                    }
                    session.submit(command);
                }
                LoopMsg::Disconnected { client } => {
                    clients.remove(&client);
                    controller.retain(|&vehicle, owner| {
                        let keep = *owner != client;
                        if !keep {
                            session.release(vehicle);
                        }
                        keep
                    });
                }
            }
        }
        match session.step() {
            Ok(Some(frame)) => {
                let _ = frames.send(encode_frame(&frame).into());
            }
            Ok(None) => {}
            Err(e) => {
                result = Err(e);
                break;
            }
        }
        stepped += 1;
        if let Some(wait) = (start + dt * stepped).checked_duration_since(Instant::now()) {
            std::thread::sleep(wait);
        }
    }
    let _ = frames.send(encode_frame(&session.frame()).into());
    let _ = ended.send(true);
    result.map(|()| session)
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn track_json(State(state): State<AppState>) -> impl IntoResponse {
    Json(state.track.as_ref().clone())
}

async fn track_csv(State(state): State<AppState>) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/csv")], state.track_csv.to_string())
}

async fn client(socket: WebSocket, state: AppState) {
    let id = state.next_client.fetch_add(1, Ordering::Relaxed);
    let (direct_tx, mut direct) = mpsc::unbounded_channel();
    let mut frames = state.frames.subscribe();
    let mut ended = state.ended.clone();
    let (mut sink, mut stream) = socket.split();
    let over = *ended.borrow();
    if over || state.to_loop.send(LoopMsg::Connected { client: id, direct: direct_tx }).is_err() {
        let _ = sink.send(Message::Close(None)).await;
        return;
    }
    let warn = |message: String| {
        let _ = state.to_loop.send(LoopMsg::Warning { client: id, message });
    };
    let mut open = sink.send(Message::Text(state.hello.to_string().into())).await.is_ok();
    while open {
        tokio::select! {
            f = frames.recv() => match f {
                Ok(text) => open = sink.send(Message::Text(text.to_string().into())).await.is_ok(),
                Err(broadcast::error::RecvError::Lagged(n)) => warn(format!("client too slow, {n} frames skipped")),
                Err(broadcast::error::RecvError::Closed) => break,
            },
            Some(text) = direct.recv() => open = sink.send(Message::Text(text.into())).await.is_ok(),
            m = stream.next() => match m {
                Some(Ok(Message::Text(text))) => match decode(&text) {
                    Incoming::Command(command) => {
                        let _ = state.to_loop.send(LoopMsg::Command { client: id, command });
                    }
                    Incoming::Hello => {}
                    Incoming::Ignored(reason) => warn(reason),
                },
                Some(Ok(Message::Binary(_))) => warn("binary messages are not supported".into()),
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                Some(Ok(Message::Close(_)) | Err(_)) | None => break,
            },
            _ = ended.changed() => {
                // deliver the closing frame before hanging up
                while let Ok(text) = frames.try_recv() {
                    let _ = sink.send(Message::Text(text.to_string().into())).await;
                }
                break;
            }
        }
    }
    let _ = state.to_loop.send(LoopMsg::Disconnected { client: id });
    let _ = sink.send(Message::Close(None)).await;
}
