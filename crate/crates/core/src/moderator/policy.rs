//! Turn-taking policy.
//!
//! Per question the moderator first leaves the floor open: students answer
//! freely and the moderator stays quiet. When the floor goes quiet (the
//! room's turn timer fires) and someone has not answered, a prompt-round
//! starts: the least active silent participant is prompted by name, one at
//! a time, at most once each. A prompted participant who answers, or whose
//! prompt lapses at the next quiet timeout, has had their chance. The
//! answer is revealed only once every active participant has answered or
//! had their chance.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::session::{ParticipantId, Room, SessionError, SessionPhase};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModeratorAction {
    OpenDiscussion,
    PresentPassage,
    AskQuestion { index: usize },
    PromptStudent { name: String },
    GiveHint { name: String },
    RevealAnswer { index: usize },
    WrapUp,
}

impl ModeratorAction {
    /// Stable machine key, e.g. `ask:0` or `prompt:Ethan`. Scripted and
    /// replay providers match on it.
    pub fn key(&self) -> String {
        match self {
            ModeratorAction::OpenDiscussion => "open".into(),
            ModeratorAction::PresentPassage => "present_passage".into(),
            ModeratorAction::AskQuestion { index } => format!("ask:{index}"),
            ModeratorAction::PromptStudent { name } => format!("prompt:{name}"),
            ModeratorAction::GiveHint { name } => format!("hint:{name}"),
            ModeratorAction::RevealAnswer { index } => format!("reveal:{index}"),
            ModeratorAction::WrapUp => "wrap_up".into(),
        }
    }

    /// Discriminant label used in transcripts and latency records.
    pub fn kind(&self) -> &'static str {
        match self {
            ModeratorAction::OpenDiscussion => "open_discussion",
            ModeratorAction::PresentPassage => "present_passage",
            ModeratorAction::AskQuestion { .. } => "ask_question",
            ModeratorAction::PromptStudent { .. } => "prompt_student",
            ModeratorAction::GiveHint { .. } => "give_hint",
            ModeratorAction::RevealAnswer { .. } => "reveal_answer",
            ModeratorAction::WrapUp => "wrap_up",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TurnPolicy {
    opened: bool,
    presented: bool,
    asked: bool,
    floor_open: bool,
    prompted: BTreeSet<ParticipantId>,
    awaiting: Option<ParticipantId>,
    hints: VecDeque<ParticipantId>,
    wrapped: bool,
}

impl TurnPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn wrapped(&self) -> bool {
        self.wrapped
    }

    /// True when the policy is waiting on students for the current question
    /// and a quiet timeout would change something.
    pub fn waiting_on_students(&self, room: &Room) -> bool {
        room.phase == SessionPhase::Discussion && self.asked
    }

    /// The prompted participant whose reply is outstanding, if any.
    pub fn awaiting(&self) -> Option<ParticipantId> {
        self.awaiting
    }

    pub fn was_prompted(&self, pid: ParticipantId) -> bool {
        self.prompted.contains(&pid)
    }

    /// Decides the next moderator move, or `None` to wait for students.
    pub fn next_action(&self, room: &Room) -> Result<Option<ModeratorAction>, SessionError> {
        match room.phase {
            SessionPhase::Discussion => {}
            SessionPhase::Feedback if !self.wrapped => return Ok(Some(ModeratorAction::WrapUp)),
            SessionPhase::Feedback | SessionPhase::Closed => return Ok(None),
            SessionPhase::Lobby => {
                return Err(SessionError::WrongPhase {
                    expected: SessionPhase::Discussion,
                    actual: room.phase,
                })
            }
        }
        if !self.opened {
            return Ok(Some(ModeratorAction::OpenDiscussion));
        }
        if !self.presented {
            return Ok(Some(ModeratorAction::PresentPassage));
        }
        let index = room.question_index;
        if !self.asked {
            return Ok(Some(ModeratorAction::AskQuestion { index }));
        }
        if let Some(p) = self
            .hints
            .iter()
            .find_map(|pid| room.participant(*pid).filter(|p| p.active))
        {
            return Ok(Some(ModeratorAction::GiveHint {
                name: p.display_name.clone(),
            }));
        }
        if room.all_had_chance()? {
            return Ok(Some(ModeratorAction::RevealAnswer { index }));
        }
        if self.floor_open || self.awaiting.is_some() {
            return Ok(None);
        }
        let candidate = room.least_active_where(|p| {
            !p.responded_current_question && !p.excused_current_question && !self.prompted.contains(&p.participant_id)
        })?;
        Ok(candidate.map(|p| ModeratorAction::PromptStudent {
            name: p.display_name.clone(),
        }))
    }

    /// Records that `action` was delivered to the room, advancing the room
    /// past a revealed question.
    pub fn on_rendered(&mut self, action: &ModeratorAction, room: &mut Room) -> Result<(), SessionError> {
        match action {
            ModeratorAction::OpenDiscussion => self.opened = true,
            ModeratorAction::PresentPassage => self.presented = true,
            ModeratorAction::AskQuestion { .. } => {
                self.asked = true;
                self.floor_open = true;
            }
            ModeratorAction::PromptStudent { name } => {
                let pid = room
                    .participant_by_name(name)
                    .map(|p| p.participant_id)
                    .ok_or(SessionError::NameInvalid)?;
                self.prompted.insert(pid);
                self.awaiting = Some(pid);
            }
            ModeratorAction::GiveHint { name } => {
                if let Some(pid) = room.participant_by_name(name).map(|p| p.participant_id) {
                    self.hints.retain(|h| *h != pid);
                }
            }
            ModeratorAction::RevealAnswer { .. } => {
                room.advance_question()?;
                self.asked = false;
                self.floor_open = false;
                self.prompted.clear();
                self.awaiting = None;
                self.hints.clear();
            }
            ModeratorAction::WrapUp => self.wrapped = true,
        }
        Ok(())
    }

    pub fn on_student_message(&mut self, pid: ParticipantId) {
        if self.awaiting == Some(pid) {
            self.awaiting = None;
        }
    }

    pub fn on_hint_request(&mut self, pid: ParticipantId) {
        if !self.hints.contains(&pid) {
            self.hints.push_back(pid);
        }
    }

    pub fn on_departure(&mut self, pid: ParticipantId) {
        if self.awaiting == Some(pid) {
            self.awaiting = None;
        }
        self.hints.retain(|h| *h != pid);
    }

    /// The floor went quiet. Closes the open floor and lapses an
    /// outstanding prompt; returns the participant whose prompt lapsed.
    pub fn on_quiet(&mut self, room: &mut Room) -> Result<Option<ParticipantId>, SessionError> {
        if !self.waiting_on_students(room) {
            return Ok(None);
        }
        self.floor_open = false;
        match self.awaiting.take() {
            Some(pid) => {
                room.excuse(pid)?;
                Ok(Some(pid))
            }
            None => Ok(None),
        }
    }
}
