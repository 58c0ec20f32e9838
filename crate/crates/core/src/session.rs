//! Room lifecycle, membership and the per-question turn ledger.
//!
//! A [`Room`] moves strictly forward through [`SessionPhase`]s. Joining the
//! last free seat makes the room eligible for auto-start; the owner then
//! calls [`Room::start_discussion`] with the selected passage. While the
//! discussion runs, every student message is tallied here so the moderator
//! policy can ask "who has not answered yet" and "who is quietest".

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Passage, QaPair};

/// Characters allowed in a meeting ID. Uppercase Crockford base32 without
/// the digits 0 and 1, so there is no 0/O or 1/I confusion when an ID is
/// read aloud or typed.
pub const ROOM_ID_ALPHABET: &[u8] = b"23456789ABCDEFGHJKMNPQRSTVWXYZ";
pub const ROOM_ID_LEN: usize = 8;
/// Attempts at drawing an unused ID before giving up.
pub const ROOM_ID_MAX_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("display name must not be empty")]
    NameInvalid,
    #[error("no unused room id after {0} attempts")]
    IdSpaceExhausted(usize),
    #[error("invalid room id {0:?}")]
    InvalidRoomId(String),
    #[error("operation requires phase {expected:?}, room is in {actual:?}")]
    WrongPhase {
        expected: SessionPhase,
        actual: SessionPhase,
    },
    #[error("unknown participant {0}")]
    UnknownParticipant(ParticipantId),
    #[error("not every active participant has responded to the current question")]
    NotAllResponded,
    #[error("room is not full ({have}/{capacity})")]
    NotFull { have: usize, capacity: usize },
    #[error("passage {0:?} has no questions")]
    NoQuestions(String),
}

/// Shareable meeting code, e.g. `K7QX4MZB`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct RoomId(String);

impl RoomId {
    pub fn generate<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let code = (0..ROOM_ID_LEN)
            .map(|_| ROOM_ID_ALPHABET[rng.random_range(0..ROOM_ID_ALPHABET.len())] as char)
            .collect();
        RoomId(code)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for RoomId {
    type Err = SessionError;

    /// Accepts lowercase input and surrounding whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let code = s.trim().to_ascii_uppercase();
        let ok = code.len() == ROOM_ID_LEN && code.bytes().all(|b| ROOM_ID_ALPHABET.contains(&b));
        if ok {
            Ok(RoomId(code))
        } else {
            Err(SessionError::InvalidRoomId(s.to_string()))
        }
    }
}

impl TryFrom<String> for RoomId {
    type Error = SessionError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<RoomId> for String {
    fn from(id: RoomId) -> Self {
        id.0
    }
}

impl fmt::Display for RoomId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Draws IDs until `is_taken` rejects none of them, at most
/// [`ROOM_ID_MAX_ATTEMPTS`] times.
pub fn new_room_id<R, F>(rng: &mut R, mut is_taken: F) -> Result<RoomId, SessionError>
where
    R: Rng + ?Sized,
    F: FnMut(&RoomId) -> bool,
{
    for _ in 0..ROOM_ID_MAX_ATTEMPTS {
        let id = RoomId::generate(rng);
        if !is_taken(&id) {
            return Ok(id);
        }
    }
    Err(SessionError::IdSpaceExhausted(ROOM_ID_MAX_ATTEMPTS))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParticipantId(pub u32);

impl fmt::Display for ParticipantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Participant {
    pub participant_id: ParticipantId,
    pub display_name: String,
    /// Room-local monotonic join tick; earlier joiners have smaller values.
    pub joined_at: u64,
    pub message_count: u32,
    pub responded_current_question: bool,
    /// Set when the participant was prompted and let the prompt lapse; they
    /// have had their chance for this question.
    pub excused_current_question: bool,
    /// False while disconnected or after leaving mid-session.
    pub active: bool,
}

impl Participant {
    /// Responded, or had a prompt-round and stayed quiet.
    pub fn had_chance(&self) -> bool {
        self.responded_current_question || self.excused_current_question
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Lobby,
    Discussion,
    Feedback,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum JoinOutcome {
    Joined {
        participant_id: ParticipantId,
        display_name: String,
        /// The join filled the last seat; the caller must start the discussion.
        auto_start: bool,
    },
    /// A disconnected participant came back under the same name.
    Rejoined {
        participant_id: ParticipantId,
        display_name: String,
    },
    RoomFull,
    AlreadyStarted,
    NotFound,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Advance {
    NextQuestion(usize),
    DiscussionComplete,
}

#[derive(Debug, Clone)]
pub struct Room {
    pub id: RoomId,
    pub capacity: usize,
    pub participants: Vec<Participant>,
    pub phase: SessionPhase,
    pub passage: Option<Passage>,
    pub question_index: usize,
    /// Number of the passage's QA pairs this session will use.
    pub question_budget: usize,
    pub created_at: u64,
    next_tick: u64,
    next_pid: u32,
}

fn clean_name(name: &str) -> Result<String, SessionError> {
    let trimmed = name.trim();
    if trimmed.is_empty() {
        Err(SessionError::NameInvalid)
    } else {
        Ok(trimmed.to_string())
    }
}

impl Room {
    /// New room in the lobby with `creator` seated first. Capacity is
    /// clamped to at least one.
    pub fn create(id: RoomId, creator: &str, capacity: usize, created_at: u64) -> Result<Self, SessionError> {
        let name = clean_name(creator)?;
        let mut room = Room {
            id,
            capacity: capacity.max(1),
            participants: Vec::new(),
            phase: SessionPhase::Lobby,
            passage: None,
            question_index: 0,
            question_budget: 0,
            created_at,
            next_tick: 0,
            next_pid: 0,
        };
        room.seat(name);
        Ok(room)
    }

    fn seat(&mut self, name: String) -> ParticipantId {
        let participant_id = ParticipantId(self.next_pid);
        self.next_pid += 1;
        self.participants.push(Participant {
            participant_id,
            display_name: name,
            joined_at: self.next_tick,
            message_count: 0,
            responded_current_question: false,
            excused_current_question: false,
            active: true,
        });
        self.next_tick += 1;
        participant_id
    }

    pub fn is_full(&self) -> bool {
        self.participants.len() >= self.capacity
    }

    /// Lobby and every seat taken.
    pub fn ready_to_start(&self) -> bool {
        self.phase == SessionPhase::Lobby && self.is_full()
    }

    pub fn participant(&self, pid: ParticipantId) -> Option<&Participant> {
        self.participants.iter().find(|p| p.participant_id == pid)
    }

    fn participant_mut(&mut self, pid: ParticipantId) -> Result<&mut Participant, SessionError> {
        self.participants
            .iter_mut()
            .find(|p| p.participant_id == pid)
            .ok_or(SessionError::UnknownParticipant(pid))
    }

    pub fn participant_by_name(&self, name: &str) -> Option<&Participant> {
        self.participants.iter().find(|p| p.display_name == name)
    }

    pub fn active_participants(&self) -> impl Iterator<Item = &Participant> {
        self.participants.iter().filter(|p| p.active)
    }

    pub fn roster(&self) -> Vec<String> {
        self.participants.iter().map(|p| p.display_name.clone()).collect()
    }

    /// The first free variant of `name`: `Ethan`, `Ethan-2`, `Ethan-3`, ...
    fn unique_name(&self, name: &str) -> String {
        if self.participant_by_name(name).is_none() {
            return name.to_string();
        }
        (2..)
            .map(|n| format!("{name}-{n}"))
            .find(|candidate| self.participant_by_name(candidate).is_none())
            .expect("unbounded suffix search")
    }

    pub fn join(&mut self, display_name: &str) -> Result<JoinOutcome, SessionError> {
        let name = clean_name(display_name)?;

        if let Some(p) = self
            .participants
            .iter_mut()
            .find(|p| p.display_name == name && !p.active)
        {
            if self.phase != SessionPhase::Closed {
                p.active = true;
                return Ok(JoinOutcome::Rejoined {
                    participant_id: p.participant_id,
                    display_name: p.display_name.clone(),
                });
            }
        }
        if matches!(self.phase, SessionPhase::Feedback | SessionPhase::Closed) {
            return Ok(JoinOutcome::AlreadyStarted);
        }
        if self.is_full() {
            return Ok(JoinOutcome::RoomFull);
        }
        if self.phase != SessionPhase::Lobby {
            return Ok(JoinOutcome::AlreadyStarted);
        }

        let name = self.unique_name(&name);
        let participant_id = self.seat(name.clone());
        Ok(JoinOutcome::Joined {
            participant_id,
            display_name: name,
            auto_start: self.is_full(),
        })
    }

    /// Lobby departures free the seat; later departures only deactivate the
    /// participant so their transcript entries stay attributable.
    pub fn leave(&mut self, pid: ParticipantId) -> Result<(), SessionError> {
        if self.phase == SessionPhase::Lobby {
            let before = self.participants.len();
            self.participants.retain(|p| p.participant_id != pid);
            if self.participants.len() == before {
                return Err(SessionError::UnknownParticipant(pid));
            }
            Ok(())
        } else {
            self.participant_mut(pid)?.active = false;
            Ok(())
        }
    }

    pub fn set_active(&mut self, pid: ParticipantId, active: bool) -> Result<(), SessionError> {
        self.participant_mut(pid)?.active = active;
        Ok(())
    }

    fn require(&self, phase: SessionPhase) -> Result<(), SessionError> {
        if self.phase == phase {
            Ok(())
        } else {
            Err(SessionError::WrongPhase {
                expected: phase,
                actual: self.phase,
            })
        }
    }

    pub fn start_discussion(&mut self, passage: Passage, max_questions: usize) -> Result<(), SessionError> {
        self.require(SessionPhase::Lobby)?;
        if !self.is_full() {
            return Err(SessionError::NotFull {
                have: self.participants.len(),
                capacity: self.capacity,
            });
        }
        if passage.qa_pairs.is_empty() {
            return Err(SessionError::NoQuestions(passage.passage_id));
        }
        self.question_budget = passage.qa_pairs.len().min(max_questions.max(1));
        self.question_index = 0;
        self.passage = Some(passage);
        self.reset_question_flags();
        self.phase = SessionPhase::Discussion;
        Ok(())
    }

    pub fn current_question(&self) -> Option<&QaPair> {
        match self.phase {
            SessionPhase::Discussion => self.passage.as_ref()?.qa_pairs.get(self.question_index),
            _ => None,
        }
    }

    pub fn record_student_message(&mut self, pid: ParticipantId, _text: &str) -> Result<(), SessionError> {
        self.require(SessionPhase::Discussion)?;
        let p = self.participant_mut(pid)?;
        p.message_count += 1;
        p.responded_current_question = true;
        Ok(())
    }

    /// Counts a message sent while no question is open; it does not answer
    /// the upcoming question.
    pub fn record_chatter(&mut self, pid: ParticipantId) -> Result<(), SessionError> {
        self.require(SessionPhase::Discussion)?;
        self.participant_mut(pid)?.message_count += 1;
        Ok(())
    }

    /// Every active participant has answered the current question.
    pub fn all_responded(&self) -> Result<bool, SessionError> {
        self.require(SessionPhase::Discussion)?;
        Ok(self.active_participants().all(|p| p.responded_current_question))
    }

    /// Every active participant has answered or let a prompt lapse.
    pub fn all_had_chance(&self) -> Result<bool, SessionError> {
        self.require(SessionPhase::Discussion)?;
        Ok(self.active_participants().all(Participant::had_chance))
    }

    pub fn excuse(&mut self, pid: ParticipantId) -> Result<(), SessionError> {
        self.require(SessionPhase::Discussion)?;
        self.participant_mut(pid)?.excused_current_question = true;
        Ok(())
    }

    /// Active participant with the fewest messages, earliest joiner on ties.
    pub fn least_active_participant(&self) -> Result<&Participant, SessionError> {
        self.least_active_where(|_| true)?.ok_or(SessionError::WrongPhase {
            expected: SessionPhase::Discussion,
            actual: self.phase,
        })
    }

    pub fn least_active_where<F>(&self, mut filter: F) -> Result<Option<&Participant>, SessionError>
    where
        F: FnMut(&Participant) -> bool,
    {
        self.require(SessionPhase::Discussion)?;
        Ok(self
            .active_participants()
            .filter(|p| filter(p))
            .min_by_key(|p| (p.message_count, p.joined_at)))
    }

    fn reset_question_flags(&mut self) {
        for p in &mut self.participants {
            p.responded_current_question = false;
            p.excused_current_question = false;
        }
    }

    pub fn advance_question(&mut self) -> Result<Advance, SessionError> {
        if !self.all_had_chance()? {
            return Err(SessionError::NotAllResponded);
        }
        if self.question_index + 1 < self.question_budget {
            self.question_index += 1;
            self.reset_question_flags();
            Ok(Advance::NextQuestion(self.question_index))
        } else {
            self.reset_question_flags();
            self.phase = SessionPhase::Feedback;
            Ok(Advance::DiscussionComplete)
        }
    }

    pub fn close(&mut self) -> Result<(), SessionError> {
        self.require(SessionPhase::Feedback)?;
        self.phase = SessionPhase::Closed;
        Ok(())
    }
}
