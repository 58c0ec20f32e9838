//! Per-room event machine.
//!
//! `RoomEngine` owns a room, its turn policy, the trimmed provider context
//! and the untrimmed archive. It never awaits: every input returns a list
//! of [`Output`]s for the caller to carry out (broadcast an event, start a
//! provider call, arm a timer), and the results come back as further
//! inputs. At most one provider call is in flight per room, so moderator
//! messages are applied in the order they were decided.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use crate::clock::Clock;
use crate::dataset::Passage;
use crate::gateway::protocol::{codes, FeedbackStats, ServerEvent};
use crate::moderator::{
    build_system_prompt, compute_stats, feedback_request, marker, moderator_request, record_moderator_text,
    ConversationHistory, FeedbackEntry, FeedbackReport, ModeratorAction, Role, Transcript, TurnPolicy,
    DEFAULT_MAX_OUTPUT_TOKENS,
};
use crate::provider::{ProviderError, ProviderRequest, ProviderResponse};
use crate::session::{JoinOutcome, ParticipantId, Room, RoomId, SessionError, SessionPhase};

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub capacity: usize,
    pub max_tokens: usize,
    pub max_questions: usize,
    pub max_output_tokens: u32,
    /// Quiet period before the moderator steps in; also the retry delay
    /// after a provider failure.
    pub turn_timeout: Duration,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            capacity: 4,
            max_tokens: 5000,
            max_questions: 3,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            turn_timeout: Duration::from_secs(20),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// Append to the room's ordered stream and deliver to every member.
    Broadcast(ServerEvent),
    /// Deliver to every connected member outside the ordered stream.
    Notice(ServerEvent),
    CallProvider {
        ticket: u64,
        request: ProviderRequest,
    },
    /// Call [`RoomEngine::timer_fired`] with `token` after `after`.
    ArmTimer {
        token: u64,
        after: Duration,
    },
    /// The room is finished and can be torn down.
    Closed,
}

#[derive(Debug, Clone, PartialEq)]
enum Pending {
    Moderator(ModeratorAction),
    Feedback(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TimerPurpose {
    Quiet,
    Retry,
}

pub struct RoomEngine {
    room: Room,
    passage: Option<Passage>,
    policy: TurnPolicy,
    history: Option<ConversationHistory>,
    archive: Transcript,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
    in_flight: Option<(u64, Pending)>,
    next_ticket: u64,
    timer: Option<(u64, TimerPurpose)>,
    next_token: u64,
    feedback_queue: Option<VecDeque<String>>,
    feedback: FeedbackReport,
}

impl RoomEngine {
    /// Opens a room in the lobby with `creator` seated. `passage` is used
    /// when the room fills.
    pub fn create(
        id: RoomId,
        creator: &str,
        passage: Passage,
        config: EngineConfig,
        clock: Arc<dyn Clock>,
    ) -> Result<(Self, ParticipantId, Vec<Output>), SessionError> {
        let room = Room::create(id, creator, config.capacity, clock.now_ms())?;
        let pid = room.participants[0].participant_id;
        let mut engine = RoomEngine {
            room,
            passage: Some(passage),
            policy: TurnPolicy::new(),
            history: None,
            archive: Transcript::new(),
            config,
            clock,
            in_flight: None,
            next_ticket: 0,
            timer: None,
            next_token: 0,
            feedback_queue: None,
            feedback: FeedbackReport::default(),
        };
        let name = engine.room.participants[0].display_name.clone();
        let mut out = Vec::new();
        engine.announce_join(&name, &mut out);
        if engine.room.ready_to_start() {
            engine.start(&mut out)?;
        }
        Ok((engine, pid, out))
    }

    pub fn room(&self) -> &Room {
        &self.room
    }

    pub fn archive(&self) -> &Transcript {
        &self.archive
    }

    pub fn history(&self) -> Option<&ConversationHistory> {
        self.history.as_ref()
    }

    pub fn feedback(&self) -> &FeedbackReport {
        &self.feedback
    }

    pub fn policy(&self) -> &TurnPolicy {
        &self.policy
    }

    pub fn is_closed(&self) -> bool {
        self.room.phase == SessionPhase::Closed
    }

    pub fn has_call_in_flight(&self) -> bool {
        self.in_flight.is_some()
    }

    fn now(&self) -> u64 {
        self.clock.now_ms()
    }

    fn name_of(&self, pid: ParticipantId) -> Result<String, SessionError> {
        self.room
            .participant(pid)
            .map(|p| p.display_name.clone())
            .ok_or(SessionError::UnknownParticipant(pid))
    }

    fn announce_join(&mut self, name: &str, out: &mut Vec<Output>) {
        let ts = self.now();
        self.archive.push(Role::System, name, marker::JOINED, ts);
        out.push(Output::Broadcast(ServerEvent::Joined {
            roster: self.room.roster(),
            display_name: name.to_string(),
        }));
    }

    pub fn join(&mut self, display_name: &str) -> Result<(JoinOutcome, Vec<Output>), SessionError> {
        let outcome = self.room.join(display_name)?;
        let mut out = Vec::new();
        match &outcome {
            JoinOutcome::Joined {
                display_name,
                auto_start,
                ..
            } => {
                self.announce_join(display_name, &mut out);
                if *auto_start {
                    self.start(&mut out)?;
                }
            }
            JoinOutcome::Rejoined {
                participant_id,
                display_name,
            } => {
                // Someone returning while a reveal is being rendered missed
                // the question; the reveal must still be able to land.
                if matches!(
                    &self.in_flight,
                    Some((_, Pending::Moderator(ModeratorAction::RevealAnswer { .. })))
                ) && !self.room.participant(*participant_id).is_some_and(|p| p.had_chance())
                {
                    self.room.excuse(*participant_id)?;
                }
                self.announce_join(display_name, &mut out);
            }
            _ => {}
        }
        Ok((outcome, out))
    }

    fn start(&mut self, out: &mut Vec<Output>) -> Result<(), SessionError> {
        let passage = self.passage.take().expect("passage reserved at creation");
        let title = passage.title.clone();
        self.room.start_discussion(passage, self.config.max_questions)?;
        let passage = self.room.passage.as_ref().expect("set by start_discussion");
        let quiz = &passage.qa_pairs[..self.room.question_budget];
        let prompt = build_system_prompt(&self.room.roster(), passage, quiz)
            .expect("roster and quiz are non-empty once the room starts");
        self.history = Some(ConversationHistory::new(prompt, self.config.max_tokens, self.now()));
        out.push(Output::Broadcast(ServerEvent::SessionStarted { passage_title: title }));
        self.drive(out);
        Ok(())
    }

    fn arm(&mut self, purpose: TimerPurpose, out: &mut Vec<Output>) {
        let token = self.next_token;
        self.next_token += 1;
        self.timer = Some((token, purpose));
        out.push(Output::ArmTimer {
            token,
            after: self.config.turn_timeout,
        });
    }

    fn call(&mut self, pending: Pending, request: ProviderRequest, out: &mut Vec<Output>) {
        let ticket = self.next_ticket;
        self.next_ticket += 1;
        self.in_flight = Some((ticket, pending));
        self.timer = None;
        out.push(Output::CallProvider { ticket, request });
    }

    /// Issues the next provider call or arms the quiet timer.
    fn drive(&mut self, out: &mut Vec<Output>) {
        if self.in_flight.is_some() {
            return;
        }
        match self.room.phase {
            SessionPhase::Lobby | SessionPhase::Closed => {}
            SessionPhase::Discussion | SessionPhase::Feedback if !self.policy.wrapped() => {
                match self.policy.next_action(&self.room) {
                    Ok(Some(action)) => {
                        let history = self.history.as_ref().expect("history exists after start");
                        let request = moderator_request(&action, &self.room, history, self.config.max_output_tokens);
                        self.call(Pending::Moderator(action), request, out);
                    }
                    Ok(None) => {
                        if self.policy.waiting_on_students(&self.room) {
                            self.arm(TimerPurpose::Quiet, out);
                        }
                    }
                    Err(e) => tracing::error!(room = %self.room.id, error = %e, "policy refused to act"),
                }
            }
            SessionPhase::Discussion | SessionPhase::Feedback => {
                let queue = self.feedback_queue.get_or_insert_with(|| self.room.roster().into());
                match queue.pop_front() {
                    Some(name) => {
                        let request = feedback_request(&name, &self.archive);
                        self.call(Pending::Feedback(name), request, out);
                    }
                    None => {
                        if let Err(e) = self.room.close() {
                            tracing::error!(room = %self.room.id, error = %e, "could not close room");
                        }
                        out.push(Output::Closed);
                    }
                }
            }
        }
    }

    pub fn student_message(&mut self, pid: ParticipantId, text: &str) -> Result<Vec<Output>, SessionError> {
        if self.room.phase != SessionPhase::Discussion {
            return Err(SessionError::WrongPhase {
                expected: SessionPhase::Discussion,
                actual: self.room.phase,
            });
        }
        let name = self.name_of(pid)?;
        if self.policy.waiting_on_students(&self.room) {
            self.room.record_student_message(pid, text)?;
        } else {
            self.room.record_chatter(pid)?;
        }
        self.policy.on_student_message(pid);
        let ts = self.now();
        let entry = self.archive.push(Role::Student, &name, text, ts);
        self.history
            .as_mut()
            .expect("history exists after start")
            .append_and_trim(entry);
        let mut out = vec![Output::Broadcast(ServerEvent::ChatBroadcast {
            name,
            text: text.to_string(),
        })];
        self.drive(&mut out);
        Ok(out)
    }

    pub fn request_hint(&mut self, pid: ParticipantId) -> Result<Vec<Output>, SessionError> {
        if self.room.phase != SessionPhase::Discussion {
            return Err(SessionError::WrongPhase {
                expected: SessionPhase::Discussion,
                actual: self.room.phase,
            });
        }
        let name = self.name_of(pid)?;
        let ts = self.now();
        self.archive.push(Role::System, name, marker::HINT_REQUEST, ts);
        self.policy.on_hint_request(pid);
        let mut out = Vec::new();
        self.drive(&mut out);
        Ok(out)
    }

    /// A participant left or their connection dropped.
    pub fn leave(&mut self, pid: ParticipantId) -> Result<Vec<Output>, SessionError> {
        let name = self.name_of(pid)?;
        if self.room.phase == SessionPhase::Lobby {
            self.room.leave(pid)?;
        } else {
            self.room.set_active(pid, false)?;
        }
        self.policy.on_departure(pid);
        let ts = self.now();
        self.archive.push(Role::System, name, marker::LEFT, ts);
        let mut out = Vec::new();
        if self.room.phase == SessionPhase::Lobby && self.room.participants.is_empty() {
            out.push(Output::Closed);
            return Ok(out);
        }
        self.drive(&mut out);
        Ok(out)
    }

    pub fn timer_fired(&mut self, token: u64) -> Vec<Output> {
        let mut out = Vec::new();
        let Some((current, purpose)) = self.timer else {
            return out;
        };
        if current != token || self.in_flight.is_some() {
            return out;
        }
        self.timer = None;
        if purpose == TimerPurpose::Quiet {
            match self.policy.on_quiet(&mut self.room) {
                Ok(Some(lapsed)) => {
                    if let Ok(name) = self.name_of(lapsed) {
                        let ts = self.now();
                        self.archive.push(Role::System, name, marker::PROMPT_EXPIRED, ts);
                    }
                }
                Ok(None) => {}
                Err(e) => tracing::error!(room = %self.room.id, error = %e, "quiet timeout failed"),
            }
        }
        self.drive(&mut out);
        out
    }

    pub fn provider_completed(&mut self, ticket: u64, result: Result<ProviderResponse, ProviderError>) -> Vec<Output> {
        let mut out = Vec::new();
        let pending = match self.in_flight.take() {
            Some((t, pending)) if t == ticket => pending,
            other => {
                self.in_flight = other;
                return out;
            }
        };
        match (pending, result) {
            (Pending::Moderator(action), Ok(resp)) => self.apply_moderator(action, resp, &mut out),
            (Pending::Moderator(action), Err(e)) => {
                tracing::warn!(room = %self.room.id, action = action.key(), error = %e, "moderator render failed");
                out.push(Output::Notice(ServerEvent::error(
                    codes::PROVIDER_FAILURE,
                    format!("{}: {e}", action.kind()),
                )));
                self.arm(TimerPurpose::Retry, &mut out);
                return out;
            }
            (Pending::Feedback(name), result) => self.apply_feedback(name, result, &mut out),
        }
        self.drive(&mut out);
        out
    }

    fn apply_moderator(&mut self, action: ModeratorAction, resp: ProviderResponse, out: &mut Vec<Output>) {
        let ts = self.now();
        let history = self.history.as_mut().expect("history exists after start");
        record_moderator_text(&action, &resp.text, history, &mut self.archive, ts);
        out.push(Output::Broadcast(ServerEvent::ModeratorMessage {
            text_markdown: resp.text,
            action: Some(action.clone()),
            latency_seconds: resp.latency_seconds,
        }));
        let revealed = match &action {
            ModeratorAction::RevealAnswer { index } => self
                .room
                .passage
                .as_ref()
                .and_then(|p| p.qa_pairs.get(*index))
                .map(|qa| (*index, qa.answer.clone())),
            _ => None,
        };
        if let Err(e) = self.policy.on_rendered(&action, &mut self.room) {
            tracing::error!(room = %self.room.id, action = action.key(), error = %e, "could not apply action");
        }
        if let Some((index, answer)) = revealed {
            out.push(Output::Broadcast(ServerEvent::QuestionRevealed { index, answer }));
        }
    }

    fn apply_feedback(&mut self, name: String, result: Result<ProviderResponse, ProviderError>, out: &mut Vec<Output>) {
        let stats = compute_stats(&self.archive, &name);
        let (text, error, latency_seconds) = match result {
            Ok(resp) => (resp.text, None, resp.latency_seconds),
            Err(e) => {
                tracing::warn!(room = %self.room.id, student = %name, error = %e, "feedback failed");
                (String::new(), Some(e.to_string()), 0.0)
            }
        };
        self.feedback.per_student.insert(
            name.clone(),
            FeedbackEntry {
                feedback_text: text.clone(),
                stats,
                error: error.clone(),
            },
        );
        out.push(Output::Broadcast(ServerEvent::FeedbackDelivered {
            feedback_text: text,
            stats: FeedbackStats {
                name,
                message_count: stats.message_count,
                mean_message_tokens: stats.mean_message_tokens,
                prompted_count: stats.prompted_count,
            },
            error,
            latency_seconds,
        }));
    }
}
