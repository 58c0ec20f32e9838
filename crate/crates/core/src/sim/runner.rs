use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;
use std::time::Duration;

use super::config::SimConfig;
use super::persona::{Move, PersonaAgent};
use super::report::SimReport;
use super::stats::LatencyRecord;
use super::SimError;
use crate::dataset::load_dataset;
use crate::engine::EngineConfig;
use crate::gateway::protocol::{codes, ClientEvent, Envelope, ServerEvent, MODERATOR_SENDER};
use crate::gateway::{Client, ClientError, ClockMode, Gateway, GatewayConfig, RunningGateway};
use crate::moderator::{
    FeedbackEntry, FeedbackReport, ModeratorAction, Role, StudentStats, Transcript, DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::provider::{with_injected_latency, ChatMessage, SharedProvider};

const ASK_DIRECTIVE: &str =
    "The moderator has just asked the group a question. Write your reply to the chat, or reply <silent> to stay quiet.";
const PROMPT_DIRECTIVE: &str =
    "The moderator has just addressed you by name. Write your reply to the chat, or reply <silent> to stay quiet.";
const HINT_DIRECTIVE: &str = "The moderator has just given you a hint. Write your reply to the chat.";

/// Runs one complete session: starts an embedded gateway unless
/// `config.server` names one, creates a room with the first persona, joins
/// the rest, and answers the moderator turn by turn until every student's
/// feedback has been delivered.
pub async fn run_simulation(config: &SimConfig) -> Result<SimReport, SimError> {
    config.validate()?;
    let mut backends = BTreeMap::new();
    for (name, cfg) in &config.backends {
        let provider = cfg.build().map_err(|e| SimError::Provider {
            who: format!("backend {name}"),
            source: e,
        })?;
        backends.insert(name.clone(), provider);
    }
    let agents = config
        .personas
        .iter()
        .map(|spec| PersonaAgent::bind(spec.clone(), &config.base_dir, &backends))
        .collect::<Result<Vec<_>, _>>()?;

    let (url, embedded) = match &config.server {
        Some(url) => {
            if config.inject_delays.is_some() {
                return Err(SimError::Config("`inject_delays` needs the embedded server".into()));
            }
            (url.clone(), None)
        }
        None => {
            let gateway = start_embedded(config).await?;
            (gateway.url(), Some(gateway))
        }
    };
    let result = drive_session(&url, agents, config.watchdog()).await;
    if let Some(gateway) = embedded {
        gateway.shutdown().await;
    }
    result
}

async fn start_embedded(config: &SimConfig) -> Result<RunningGateway, SimError> {
    let dataset = load_dataset(&config.dataset.path, config.dataset.format)
        .map_err(|e| SimError::Config(format!("dataset: {e}")))?;
    let mut moderator: SharedProvider = config.moderator.build().map_err(|e| SimError::Provider {
        who: "moderator".into(),
        source: e,
    })?;
    if let Some(delays) = &config.inject_delays {
        let wrapped = with_injected_latency(moderator, delays.clone()).map_err(|e| SimError::Config(e.to_string()))?;
        moderator = Arc::new(wrapped);
    }
    let gateway_config = GatewayConfig {
        engine: EngineConfig {
            capacity: config.capacity,
            max_tokens: config.max_tokens,
            max_questions: config.max_questions,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            turn_timeout: config.turn_timeout(),
        },
        min_qa_pairs: config.min_qa_pairs,
        seed: config.seed,
        clock: ClockMode::Logical,
        ..GatewayConfig::default()
    };
    let gateway = Gateway::new(Arc::new(dataset), moderator, gateway_config)
        .map_err(|e| SimError::Config(format!("dataset: {e}")))?;
    gateway
        .bind("127.0.0.1:0")
        .await
        .map_err(|e| SimError::Io(format!("cannot bind embedded server: {e}")))
}

async fn connect(url: &str) -> Result<Client, SimError> {
    Client::connect(url).await.map_err(|e| match e {
        ClientError::Connect { url, message } => SimError::ServerUnreachable(format!("{url}: {message}")),
        other => SimError::ServerUnreachable(other.to_string()),
    })
}

fn stalled(watchdog: Duration, waiting_for: &str) -> impl Fn(ClientError) -> SimError + '_ {
    move |e| match e {
        ClientError::Timeout(_) => SimError::SessionStalled {
            waited: watchdog,
            waiting_for: waiting_for.to_string(),
        },
        other => SimError::Protocol(format!("{other} while waiting for {waiting_for}")),
    }
}

fn refused(persona: &str, event: ServerEvent) -> SimError {
    match event {
        ServerEvent::Error { code, detail } => SimError::Refused {
            persona: persona.to_string(),
            code,
            detail,
        },
        other => SimError::Refused {
            persona: persona.to_string(),
            code: other.type_name().to_string(),
            detail: String::new(),
        },
    }
}

async fn drive_session(url: &str, agents: Vec<PersonaAgent>, watchdog: Duration) -> Result<SimReport, SimError> {
    let names: Vec<String> = agents.iter().map(|a| a.spec.name.clone()).collect();
    let mut creator = connect(url).await?;
    creator
        .send(&ClientEvent::CreateRoom {
            display_name: names[0].clone(),
        })
        .map_err(|e| SimError::Protocol(e.to_string()))?;
    let waiting = "room_created";
    let env = creator
        .recv_timeout(watchdog)
        .await
        .map_err(stalled(watchdog, waiting))?;
    let event = ServerEvent::from_envelope(&env).map_err(|e| SimError::Protocol(e.to_string()))?;
    let room_id = match event {
        ServerEvent::RoomCreated { room_id } if env.seq.is_none() => room_id,
        other => return Err(refused(&names[0], other)),
    };
    creator.set_identity(&names[0], &room_id);
    tracing::info!(room = %room_id, creator = %names[0], "room created");

    let mut clients = vec![creator];
    for name in &names[1..] {
        let mut client = connect(url).await?;
        client.set_identity(name, &room_id);
        client
            .send(&ClientEvent::JoinRoom {
                room_id: room_id.clone(),
                display_name: name.clone(),
                backfill_from: None,
            })
            .map_err(|e| SimError::Protocol(e.to_string()))?;
        let waiting = format!("{name} to join");
        let env = client
            .recv_until(watchdog, |e| {
                (e.kind == "joined" && e.payload["display_name"] == name.as_str())
                    || (e.seq.is_none() && (e.kind == "room_full" || e.kind == "error"))
            })
            .await
            .map_err(stalled(watchdog, &waiting))?;
        if env.kind != "joined" {
            let event = ServerEvent::from_envelope(&env).map_err(|e| SimError::Protocol(e.to_string()))?;
            return Err(refused(name, event));
        }
        clients.push(client);
    }

    let mut session = Session {
        room_id,
        clients,
        agents,
        names,
        watchdog,
        next_seq: 0,
        backlog: VecDeque::new(),
        transcript: Transcript::new(),
        visible: Vec::new(),
        latency: Vec::new(),
        feedback: FeedbackReport::default(),
        roster: Vec::new(),
        passage_title: String::new(),
        reached_feedback: false,
    };
    let outcome = session.run().await;
    for client in session.clients.drain(..) {
        client.close();
    }
    outcome?;
    SimReport::assemble(
        session.room_id,
        session.passage_title,
        session.roster,
        session.transcript,
        session.latency,
        session.feedback,
        session.reached_feedback,
    )
    .map_err(SimError::from)
}

enum Turn {
    Ask,
    Prompted,
}

struct Session {
    room_id: String,
    /// One connection per persona; the first also observes the room stream.
    clients: Vec<Client>,
    agents: Vec<PersonaAgent>,
    names: Vec<String>,
    watchdog: Duration,
    next_seq: u64,
    /// Envelopes already absorbed but not yet acted on.
    backlog: VecDeque<Envelope>,
    transcript: Transcript,
    visible: Vec<ChatMessage>,
    latency: Vec<LatencyRecord>,
    feedback: FeedbackReport,
    roster: Vec<String>,
    passage_title: String,
    reached_feedback: bool,
}

impl Session {
    async fn run(&mut self) -> Result<(), SimError> {
        loop {
            let env = self.next("the next moderator action").await?;
            let Some(action) = moderator_action(&env) else {
                continue;
            };
            match action {
                ModeratorAction::AskQuestion { .. } => {
                    for i in 0..self.agents.len() {
                        self.take_turn(i, Turn::Ask).await?;
                    }
                }
                ModeratorAction::PromptStudent { name } => match self.names.iter().position(|n| *n == name) {
                    Some(i) => self.take_turn(i, Turn::Prompted).await?,
                    None => tracing::warn!(student = %name, "moderator prompted someone outside the simulation"),
                },
                ModeratorAction::WrapUp => {
                    while self.feedback.per_student.len() < self.roster.len() {
                        self.next("feedback_delivered").await?;
                    }
                    return Ok(());
                }
                _ => {}
            }
        }
    }

    async fn take_turn(&mut self, i: usize, turn: Turn) -> Result<(), SimError> {
        let mut directive = match turn {
            Turn::Ask => ASK_DIRECTIVE,
            Turn::Prompted => PROMPT_DIRECTIVE,
        };
        let mut hinted = false;
        loop {
            match self.agents[i].respond(&self.visible, directive).await? {
                Move::Say(text) if !text.is_empty() => return self.post(i, text).await,
                Move::RequestHint if !hinted => {
                    hinted = true;
                    directive = HINT_DIRECTIVE;
                    self.send(i, &ClientEvent::RequestHint {})?;
                    let name = self.names[i].clone();
                    self.wait_for(
                        &format!("a hint for {name}"),
                        |env| matches!(moderator_action(env), Some(ModeratorAction::GiveHint { name: n }) if n == name),
                    )
                    .await?;
                }
                _ => return Ok(()),
            }
        }
    }

    fn send(&self, i: usize, event: &ClientEvent) -> Result<(), SimError> {
        self.clients[i]
            .send(event)
            .map_err(|e| SimError::Protocol(format!("{}: {e}", self.names[i])))
    }

    async fn post(&mut self, i: usize, text: String) -> Result<(), SimError> {
        self.send(i, &ClientEvent::PostMessage { text: text.clone() })?;
        let name = self.names[i].clone();
        self.wait_for(&format!("the echo of {name}'s message"), |env| {
            env.kind == "chat_broadcast" && env.sender == name && env.payload["text"] == text.as_str()
        })
        .await
    }

    /// Reads until `pred` matches; everything before it is kept for the
    /// main loop.
    async fn wait_for<F>(&mut self, waiting_for: &str, pred: F) -> Result<(), SimError>
    where
        F: Fn(&Envelope) -> bool,
    {
        loop {
            let env = self.pull(waiting_for).await?;
            if pred(&env) {
                return Ok(());
            }
            self.backlog.push_back(env);
        }
    }

    async fn next(&mut self, waiting_for: &str) -> Result<Envelope, SimError> {
        match self.backlog.pop_front() {
            Some(env) => Ok(env),
            None => self.pull(waiting_for).await,
        }
    }

    /// Next envelope on the room stream, checked for gaps and absorbed into
    /// the transcript.
    async fn pull(&mut self, waiting_for: &str) -> Result<Envelope, SimError> {
        for client in &mut self.clients[1..] {
            client.drain();
        }
        loop {
            let env = self.clients[0]
                .recv_timeout(self.watchdog)
                .await
                .map_err(stalled(self.watchdog, waiting_for))?;
            let Some(seq) = env.seq else {
                if env.kind == "error" && env.payload["code"] == codes::SHUTTING_DOWN {
                    return Err(SimError::Protocol("server shut down mid-session".into()));
                }
                tracing::debug!(kind = %env.kind, payload = %env.payload, "unsequenced envelope");
                continue;
            };
            if seq != self.next_seq {
                return Err(SimError::Protocol(format!("expected seq {}, got {seq}", self.next_seq)));
            }
            if env.room_id != self.room_id {
                return Err(SimError::Protocol(format!(
                    "envelope for room {:?} on room {:?}",
                    env.room_id, self.room_id
                )));
            }
            self.next_seq += 1;
            self.absorb(&env)?;
            return Ok(env);
        }
    }

    fn absorb(&mut self, env: &Envelope) -> Result<(), SimError> {
        let event = ServerEvent::from_envelope(env).map_err(|e| SimError::Protocol(e.to_string()))?;
        match event {
            ServerEvent::Joined { roster, display_name } => {
                self.transcript
                    .push(Role::System, display_name, crate::moderator::marker::JOINED, env.ts);
                self.roster = roster;
            }
            ServerEvent::SessionStarted { passage_title } => self.passage_title = passage_title,
            ServerEvent::ChatBroadcast { name, text } => {
                self.transcript.push(Role::Student, &name, &text, env.ts);
                self.visible.push(ChatMessage {
                    role: Role::Student,
                    name,
                    text,
                });
            }
            ServerEvent::ModeratorMessage {
                text_markdown,
                action,
                latency_seconds,
            } => {
                if let Some(action) = &action {
                    self.transcript.push_action(action, env.ts);
                    self.latency.push(LatencyRecord {
                        interaction_index: self.latency.len(),
                        seconds: latency_seconds,
                        action_kind: action.kind().to_string(),
                    });
                    if *action == ModeratorAction::WrapUp {
                        self.reached_feedback = true;
                    }
                }
                self.transcript
                    .push(Role::Moderator, MODERATOR_SENDER, &text_markdown, env.ts);
                self.visible.push(ChatMessage {
                    role: Role::Moderator,
                    name: MODERATOR_SENDER.into(),
                    text: text_markdown,
                });
            }
            ServerEvent::FeedbackDelivered {
                feedback_text,
                stats,
                error,
                latency_seconds,
            } => {
                if error.is_none() {
                    self.latency.push(LatencyRecord {
                        interaction_index: self.latency.len(),
                        seconds: latency_seconds,
                        action_kind: "feedback".into(),
                    });
                }
                self.feedback.per_student.insert(
                    stats.name,
                    FeedbackEntry {
                        feedback_text,
                        stats: StudentStats {
                            message_count: stats.message_count,
                            mean_message_tokens: stats.mean_message_tokens,
                            prompted_count: stats.prompted_count,
                        },
                        error,
                    },
                );
            }
            ServerEvent::QuestionRevealed { .. } | ServerEvent::Error { .. } => {}
            ServerEvent::RoomCreated { .. } | ServerEvent::RoomFull {} => {
                return Err(SimError::Protocol(format!("{} on the room stream", env.kind)));
            }
        }
        Ok(())
    }
}

fn moderator_action(env: &Envelope) -> Option<ModeratorAction> {
    if env.kind != "moderator_message" {
        return None;
    }
    match ServerEvent::from_envelope(env) {
        Ok(ServerEvent::ModeratorMessage { action, .. }) => action,
        _ => None,
    }
}
