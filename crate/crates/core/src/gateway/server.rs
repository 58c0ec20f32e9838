use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;
use tokio_tungstenite::tungstenite::Message;

use super::protocol::{codes, ClientEvent, Envelope, ProtocolError, ServerEvent};
use super::room::{session_error_event, ConnId, JoinReply, Outbound, RoomActor, RoomHandle};
use crate::clock::{Clock, LogicalClock, SystemClock};
use crate::dataset::{select_passage_with, Dataset, DatasetError};
use crate::engine::{EngineConfig, RoomEngine};
use crate::provider::SharedProvider;
use crate::session::{new_room_id, ParticipantId, RoomId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClockMode {
    #[default]
    System,
    /// Each room counts its own timestamps from zero, for reproducible runs.
    Logical,
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub engine: EngineConfig,
    pub min_qa_pairs: usize,
    pub heartbeat: Duration,
    /// Seeds room ids and passage selection.
    pub seed: u64,
    pub clock: ClockMode,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            engine: EngineConfig::default(),
            min_qa_pairs: 1,
            heartbeat: Duration::from_secs(15),
            seed: 0,
            clock: ClockMode::System,
        }
    }
}

struct Registry {
    rooms: HashMap<RoomId, RoomHandle>,
    rng: ChaCha8Rng,
}

pub(crate) struct GatewayState {
    dataset: Arc<Dataset>,
    provider: SharedProvider,
    config: GatewayConfig,
    registry: Mutex<Registry>,
    next_conn: AtomicU64,
}

impl GatewayState {
    pub(crate) fn forget_room(&self, id: &RoomId) {
        self.registry.lock().expect("registry lock").rooms.remove(id);
    }

    fn room(&self, id: &RoomId) -> Option<RoomHandle> {
        self.registry.lock().expect("registry lock").rooms.get(id).cloned()
    }

    fn stamp(&self) -> u64 {
        match self.config.clock {
            ClockMode::System => SystemClock.now_ms(),
            ClockMode::Logical => 0,
        }
    }

    fn room_clock(&self) -> Arc<dyn Clock> {
        match self.config.clock {
            ClockMode::System => Arc::new(SystemClock),
            ClockMode::Logical => Arc::new(LogicalClock::new()),
        }
    }

    fn create_room(
        self: &Arc<Self>,
        display_name: &str,
        conn: ConnId,
        out: Outbound,
    ) -> Result<(RoomHandle, ParticipantId), ServerEvent> {
        if display_name.trim().is_empty() {
            return Err(ServerEvent::error(
                codes::NAME_INVALID,
                "display name must not be empty",
            ));
        }
        let clock = self.room_clock();
        let mut registry = self.registry.lock().expect("registry lock");
        let Registry { rooms, rng } = &mut *registry;
        let id = new_room_id(rng, |id| rooms.contains_key(id)).map_err(|e| session_error_event(&e))?;
        let passage = select_passage_with(&self.dataset, self.config.min_qa_pairs, rng)
            .map_err(|e| ServerEvent::error(codes::NO_PASSAGE, e.to_string()))?
            .clone();
        let (engine, pid, initial) = RoomEngine::create(
            id.clone(),
            display_name,
            passage,
            self.config.engine.clone(),
            clock.clone(),
        )
        .map_err(|e| session_error_event(&e))?;
        let created = ServerEvent::RoomCreated {
            room_id: id.to_string(),
        }
        .to_envelope(id.as_str(), None, self.stamp());
        let _ = out.send(created);
        let handle = RoomActor::spawn(
            engine,
            clock,
            self.provider.clone(),
            (pid, conn, out),
            initial,
            Arc::downgrade(self),
        );
        rooms.insert(id.clone(), handle.clone());
        tracing::info!(room = %id, creator = display_name, "room created");
        Ok((handle, pid))
    }
}

/// The realtime server before it is bound to a socket.
pub struct Gateway {
    state: Arc<GatewayState>,
}

pub struct RunningGateway {
    addr: SocketAddr,
    shutdown: watch::Sender<bool>,
    task: JoinHandle<()>,
    state: Arc<GatewayState>,
}

impl Gateway {
    /// Fails when the dataset has no passage with at least
    /// `config.min_qa_pairs` QA pairs.
    pub fn new(dataset: Arc<Dataset>, provider: SharedProvider, config: GatewayConfig) -> Result<Self, DatasetError> {
        if dataset.eligible(config.min_qa_pairs).next().is_none() {
            return Err(DatasetError::NoEligiblePassage {
                min_qa_pairs: config.min_qa_pairs,
            });
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Gateway {
            state: Arc::new(GatewayState {
                dataset,
                provider,
                config,
                registry: Mutex::new(Registry {
                    rooms: HashMap::new(),
                    rng,
                }),
                next_conn: AtomicU64::new(0),
            }),
        })
    }

    pub async fn bind(self, addr: &str) -> std::io::Result<RunningGateway> {
        let listener = TcpListener::bind(addr).await?;
        let addr = listener.local_addr()?;
        let (shutdown, shutdown_rx) = watch::channel(false);
        let state = self.state.clone();
        let task = tokio::spawn(accept_loop(listener, state.clone(), shutdown_rx));
        Ok(RunningGateway {
            addr,
            shutdown,
            task,
            state,
        })
    }
}

impl RunningGateway {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn live_rooms(&self) -> usize {
        self.state.registry.lock().expect("registry lock").rooms.len()
    }

    /// Tells every connection the server is going away, stops the rooms
    /// and waits for the accept loop to finish.
    pub async fn shutdown(self) {
        let _ = self.shutdown.send(true);
        let rooms: Vec<RoomHandle> = self
            .state
            .registry
            .lock()
            .expect("registry lock")
            .rooms
            .values()
            .cloned()
            .collect();
        for room in rooms {
            room.shutdown();
        }
        let _ = self.task.await;
    }
}

async fn accept_loop(listener: TcpListener, state: Arc<GatewayState>, mut shutdown: watch::Receiver<bool>) {
    let mut connections = Vec::new();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    let conn = state.next_conn.fetch_add(1, Ordering::Relaxed);
                    tracing::debug!(%peer, conn, "connection accepted");
                    connections.push(tokio::spawn(serve_connection(stream, conn, state.clone(), shutdown.clone())));
                }
                Err(e) => tracing::warn!(error = %e, "accept failed"),
            },
            _ = shutdown.changed() => break,
        }
        connections.retain(|c: &JoinHandle<()>| !c.is_finished());
    }
    for c in connections {
        let _ = tokio::time::timeout(Duration::from_secs(2), c).await;
    }
}

/// What the reader loop should do after a frame.
enum Next {
    Continue,
    Close,
}

struct Connection {
    conn: ConnId,
    state: Arc<GatewayState>,
    out: Outbound,
    membership: Option<(RoomHandle, ParticipantId)>,
}

impl Connection {
    fn reply(&self, event: ServerEvent) {
        let room = self
            .membership
            .as_ref()
            .map(|(h, _)| h.id.to_string())
            .unwrap_or_default();
        let _ = self.out.send(event.to_envelope(&room, None, self.state.stamp()));
    }

    async fn on_frame(&mut self, text: &str) -> Next {
        let event = match Envelope::parse(text).and_then(|env| ClientEvent::from_envelope(&env)) {
            Ok(event) => event,
            Err(e @ ProtocolError::UnknownType(_)) => {
                self.reply(ServerEvent::error(e.code(), e.to_string()));
                return Next::Continue;
            }
            Err(e) => {
                self.reply(ServerEvent::error(e.code(), e.to_string()));
                return Next::Close;
            }
        };
        match event {
            ClientEvent::CreateRoom { display_name } => {
                if self.membership.is_some() {
                    self.reply(ServerEvent::error(
                        codes::ALREADY_JOINED,
                        "leave the current room first",
                    ));
                    return Next::Continue;
                }
                match self.state.create_room(&display_name, self.conn, self.out.clone()) {
                    Ok(m) => self.membership = Some(m),
                    Err(e) => self.reply(e),
                }
            }
            ClientEvent::JoinRoom {
                room_id,
                display_name,
                backfill_from,
            } => {
                if self.membership.is_some() {
                    self.reply(ServerEvent::error(
                        codes::ALREADY_JOINED,
                        "leave the current room first",
                    ));
                    return Next::Continue;
                }
                let Some(handle) = room_id.parse::<RoomId>().ok().and_then(|id| self.state.room(&id)) else {
                    self.reply(ServerEvent::error(codes::UNKNOWN_ROOM, format!("no room {room_id:?}")));
                    return Next::Continue;
                };
                match handle
                    .join(display_name, self.conn, self.out.clone(), backfill_from)
                    .await
                {
                    JoinReply::Joined { pid } => self.membership = Some((handle, pid)),
                    JoinReply::Refused(event) => {
                        let env = event.to_envelope(handle.id.as_str(), None, self.state.stamp());
                        let _ = self.out.send(env);
                    }
                }
            }
            ClientEvent::PostMessage { text } => {
                let Some((handle, pid)) = &self.membership else {
                    self.reply(ServerEvent::error(codes::NOT_MEMBER, "join a room first"));
                    return Next::Continue;
                };
                if text.trim().is_empty() {
                    self.reply(ServerEvent::error(codes::EMPTY_MESSAGE, "message text is empty"));
                    return Next::Continue;
                }
                if let Err(e) = handle.post(*pid, text).await {
                    self.reply(e);
                }
            }
            ClientEvent::RequestHint {} => {
                let Some((handle, pid)) = &self.membership else {
                    self.reply(ServerEvent::error(codes::NOT_MEMBER, "join a room first"));
                    return Next::Continue;
                };
                if let Err(e) = handle.hint(*pid).await {
                    self.reply(e);
                }
            }
            ClientEvent::Leave {} => {
                if let Some((handle, pid)) = self.membership.take() {
                    handle.leave(pid, self.conn);
                }
            }
        }
        Next::Continue
    }
}

async fn serve_connection(
    stream: TcpStream,
    conn: ConnId,
    state: Arc<GatewayState>,
    mut shutdown: watch::Receiver<bool>,
) {
    let ws = match tokio_tungstenite::accept_async(stream).await {
        Ok(ws) => ws,
        Err(e) => {
            tracing::debug!(conn, error = %e, "websocket handshake failed");
            return;
        }
    };
    let heartbeat = state.config.heartbeat;
    let (mut sink, mut source) = ws.split();
    let (out, mut outbound) = mpsc::unbounded_channel::<Envelope>();
    let mut connection = Connection {
        conn,
        state,
        out,
        membership: None,
    };
    let mut ping = tokio::time::interval_at(tokio::time::Instant::now() + heartbeat, heartbeat);
    let mut missed_pongs = 0u32;
    let mut closing = false;

    while !closing {
        tokio::select! {
            biased;
            Some(env) = outbound.recv() => {
                if sink.send(Message::text(env.to_json())).await.is_err() {
                    break;
                }
            }
            frame = source.next() => match frame {
                Some(Ok(Message::Text(text))) => {
                    if let Next::Close = connection.on_frame(text.as_str()).await {
                        closing = true;
                    }
                }
                Some(Ok(Message::Binary(_))) => {
                    connection.reply(ServerEvent::error(codes::MALFORMED, "binary frames are not supported"));
                    closing = true;
                }
                Some(Ok(Message::Pong(_))) => missed_pongs = 0,
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                Some(Ok(_)) => {}
            },
            _ = ping.tick() => {
                if missed_pongs >= 2 {
                    tracing::info!(conn, "two heartbeats unanswered, dropping connection");
                    break;
                }
                missed_pongs += 1;
                if sink.send(Message::Ping(Vec::new().into())).await.is_err() {
                    break;
                }
            }
            _ = shutdown.changed() => {
                connection.reply(ServerEvent::error(codes::SHUTTING_DOWN, "server is shutting down"));
                closing = true;
            }
        }
    }
    if closing {
        while let Ok(env) = outbound.try_recv() {
            if sink.send(Message::text(env.to_json())).await.is_err() {
                break;
            }
        }
        let _ = sink.send(Message::Close(None)).await;
    }
    if let Some((handle, pid)) = connection.membership.take() {
        handle.leave(pid, conn);
    }
}
