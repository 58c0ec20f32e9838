//! Room actor: the single writer for one room.
//!
//! The actor owns the [`RoomEngine`] and the room's ordered stream. Every
//! broadcast is stamped with the next `seq`, logged for backfill, and then
//! pushed to each member's outbound queue. Provider calls and timers run
//! as detached tasks that report back through the command channel, so a
//! slow provider never holds up joins or other rooms.

use std::collections::{BTreeMap, VecDeque};
use std::sync::{Arc, Weak};

use tokio::sync::{mpsc, oneshot};

use super::protocol::{codes, Envelope, ServerEvent};
use super::server::GatewayState;
use crate::clock::Clock;
use crate::engine::{Output, RoomEngine};
use crate::provider::{timed_generate, ProviderError, ProviderResponse, SharedProvider};
use crate::session::{JoinOutcome, ParticipantId, RoomId, SessionError};

pub(crate) type Outbound = mpsc::UnboundedSender<Envelope>;
pub(crate) type ConnId = u64;

#[derive(Debug)]
pub(crate) enum JoinReply {
    Joined { pid: ParticipantId },
    Refused(ServerEvent),
}

pub(crate) enum RoomCommand {
    Join {
        name: String,
        conn: ConnId,
        out: Outbound,
        backfill_from: Option<u64>,
        reply: oneshot::Sender<JoinReply>,
    },
    Post {
        pid: ParticipantId,
        text: String,
        reply: oneshot::Sender<Result<(), ServerEvent>>,
    },
    Hint {
        pid: ParticipantId,
        reply: oneshot::Sender<Result<(), ServerEvent>>,
    },
    Leave {
        pid: ParticipantId,
        conn: ConnId,
    },
    ProviderDone {
        ticket: u64,
        result: Result<ProviderResponse, ProviderError>,
    },
    Timer {
        token: u64,
    },
    Shutdown,
}

#[derive(Clone)]
pub(crate) struct RoomHandle {
    pub id: RoomId,
    tx: mpsc::UnboundedSender<RoomCommand>,
}

fn gone() -> ServerEvent {
    ServerEvent::error(codes::UNKNOWN_ROOM, "room is closed")
}

pub(crate) fn session_error_event(e: &SessionError) -> ServerEvent {
    let code = match e {
        SessionError::NameInvalid => codes::NAME_INVALID,
        SessionError::UnknownParticipant(_) => codes::NOT_MEMBER,
        SessionError::IdSpaceExhausted(_) => codes::SERVER_BUSY,
        _ => codes::WRONG_PHASE,
    };
    ServerEvent::error(code, e.to_string())
}

impl RoomHandle {
    pub async fn join(&self, name: String, conn: ConnId, out: Outbound, backfill_from: Option<u64>) -> JoinReply {
        let (reply, rx) = oneshot::channel();
        let cmd = RoomCommand::Join {
            name,
            conn,
            out,
            backfill_from,
            reply,
        };
        if self.tx.send(cmd).is_err() {
            return JoinReply::Refused(gone());
        }
        rx.await.unwrap_or_else(|_| JoinReply::Refused(gone()))
    }

    pub async fn post(&self, pid: ParticipantId, text: String) -> Result<(), ServerEvent> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(RoomCommand::Post { pid, text, reply })
            .map_err(|_| gone())?;
        rx.await.unwrap_or_else(|_| Err(gone()))
    }

    pub async fn hint(&self, pid: ParticipantId) -> Result<(), ServerEvent> {
        let (reply, rx) = oneshot::channel();
        self.tx.send(RoomCommand::Hint { pid, reply }).map_err(|_| gone())?;
        rx.await.unwrap_or_else(|_| Err(gone()))
    }

    pub fn leave(&self, pid: ParticipantId, conn: ConnId) {
        let _ = self.tx.send(RoomCommand::Leave { pid, conn });
    }

    pub fn shutdown(&self) {
        let _ = self.tx.send(RoomCommand::Shutdown);
    }
}

struct Member {
    conn: ConnId,
    out: Outbound,
}

pub(crate) struct RoomActor {
    id: RoomId,
    engine: RoomEngine,
    clock: Arc<dyn Clock>,
    provider: SharedProvider,
    members: BTreeMap<ParticipantId, Member>,
    log: Vec<Envelope>,
    tx: mpsc::UnboundedSender<RoomCommand>,
    state: Weak<GatewayState>,
    closed: bool,
}

impl RoomActor {
    /// Spawns the actor for a freshly created room. `creator` is seated and
    /// `initial` holds the engine's creation outputs.
    pub fn spawn(
        engine: RoomEngine,
        clock: Arc<dyn Clock>,
        provider: SharedProvider,
        creator: (ParticipantId, ConnId, Outbound),
        initial: Vec<Output>,
        state: Weak<GatewayState>,
    ) -> RoomHandle {
        let (tx, rx) = mpsc::unbounded_channel();
        let id = engine.room().id.clone();
        let mut members = BTreeMap::new();
        members.insert(
            creator.0,
            Member {
                conn: creator.1,
                out: creator.2,
            },
        );
        let actor = RoomActor {
            id: id.clone(),
            engine,
            clock,
            provider,
            members,
            log: Vec::new(),
            tx: tx.clone(),
            state,
            closed: false,
        };
        tokio::spawn(actor.run(rx, initial));
        RoomHandle { id, tx }
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<RoomCommand>, initial: Vec<Output>) {
        self.apply(initial);
        while !self.closed {
            let Some(cmd) = rx.recv().await else { break };
            self.handle(cmd);
        }
        if let Some(state) = self.state.upgrade() {
            state.forget_room(&self.id);
        }
        tracing::info!(room = %self.id, "room closed");
    }

    fn handle(&mut self, cmd: RoomCommand) {
        match cmd {
            RoomCommand::Join {
                name,
                conn,
                out,
                backfill_from,
                reply,
            } => {
                let (outcome, outputs) = match self.engine.join(&name) {
                    Ok(r) => r,
                    Err(e) => {
                        let _ = reply.send(JoinReply::Refused(session_error_event(&e)));
                        return;
                    }
                };
                let pid = match outcome {
                    JoinOutcome::Joined { participant_id, .. } | JoinOutcome::Rejoined { participant_id, .. } => {
                        participant_id
                    }
                    JoinOutcome::RoomFull => {
                        let _ = reply.send(JoinReply::Refused(ServerEvent::RoomFull {}));
                        return;
                    }
                    JoinOutcome::AlreadyStarted | JoinOutcome::NotFound => {
                        let _ = reply.send(JoinReply::Refused(ServerEvent::error(
                            codes::ALREADY_STARTED,
                            "the discussion in this room has already started",
                        )));
                        return;
                    }
                };
                if let Some(from) = backfill_from {
                    for env in self.log.iter().skip(from as usize) {
                        let _ = out.send(env.clone());
                    }
                }
                self.members.insert(pid, Member { conn, out });
                let _ = reply.send(JoinReply::Joined { pid });
                self.apply(outputs);
            }
            RoomCommand::Post { pid, text, reply } => match self.engine.student_message(pid, &text) {
                Ok(outputs) => {
                    let _ = reply.send(Ok(()));
                    self.apply(outputs);
                }
                Err(e) => {
                    let _ = reply.send(Err(session_error_event(&e)));
                }
            },
            RoomCommand::Hint { pid, reply } => match self.engine.request_hint(pid) {
                Ok(outputs) => {
                    let _ = reply.send(Ok(()));
                    self.apply(outputs);
                }
                Err(e) => {
                    let _ = reply.send(Err(session_error_event(&e)));
                }
            },
            RoomCommand::Leave { pid, conn } => self.depart(pid, Some(conn)),
            RoomCommand::ProviderDone { ticket, result } => {
                let outputs = self.engine.provider_completed(ticket, result);
                self.apply(outputs);
            }
            RoomCommand::Timer { token } => {
                let outputs = self.engine.timer_fired(token);
                self.apply(outputs);
            }
            RoomCommand::Shutdown => self.closed = true,
        }
    }

    /// Removes a member. `conn` guards against a stale connection dropping
    /// after the participant already reconnected elsewhere.
    fn depart(&mut self, pid: ParticipantId, conn: Option<ConnId>) {
        match (self.members.get(&pid), conn) {
            (Some(m), Some(c)) if m.conn != c => return,
            (None, Some(_)) => return,
            _ => {}
        }
        self.members.remove(&pid);
        if self.engine.is_closed() {
            return;
        }
        match self.engine.leave(pid) {
            Ok(outputs) => self.apply(outputs),
            Err(e) => tracing::debug!(room = %self.id, error = %e, "departure ignored"),
        }
    }

    fn apply(&mut self, outputs: Vec<Output>) {
        let mut queue: VecDeque<Output> = outputs.into();
        while let Some(output) = queue.pop_front() {
            match output {
                Output::Broadcast(event) => {
                    let seq = self.log.len() as u64;
                    let env = event.to_envelope(self.id.as_str(), Some(seq), self.clock.now_ms());
                    self.log.push(env.clone());
                    let failed = self.deliver(&env);
                    for pid in failed {
                        tracing::info!(room = %self.id, participant = %pid, "delivery failed, marking disconnected");
                        self.members.remove(&pid);
                        if !self.engine.is_closed() {
                            if let Ok(more) = self.engine.leave(pid) {
                                queue.extend(more);
                            }
                        }
                    }
                }
                Output::Notice(event) => {
                    let env = event.to_envelope(self.id.as_str(), None, self.clock.now_ms());
                    self.deliver(&env);
                }
                Output::CallProvider { ticket, request } => {
                    let provider = self.provider.clone();
                    let tx = self.tx.clone();
                    tokio::spawn(async move {
                        let result = timed_generate(provider.as_ref(), &request).await;
                        let _ = tx.send(RoomCommand::ProviderDone { ticket, result });
                    });
                }
                Output::ArmTimer { token, after } => {
                    let tx = self.tx.clone();
                    tokio::spawn(async move {
                        tokio::time::sleep(after).await;
                        let _ = tx.send(RoomCommand::Timer { token });
                    });
                }
                Output::Closed => self.closed = true,
            }
        }
    }

    fn deliver(&self, env: &Envelope) -> Vec<ParticipantId> {
        self.members
            .iter()
            .filter(|(_, m)| m.out.send(env.clone()).is_err())
            .map(|(pid, _)| *pid)
            .collect()
    }
}
