//! Wire vocabulary. Every frame is one UTF-8 text message holding a JSON
//! envelope:
//!
//! ```json
//! {"type": "chat_broadcast", "room_id": "K7QM2XPA", "sender": "Ethan",
//!  "payload": {"name": "Ethan", "text": "I don't know"}, "seq": 12, "ts": 1718000000000}
//! ```
//!
//! `seq` is present only on a room's broadcast stream, where it counts up
//! from 0 without gaps. Sender-only replies (`room_created`, `room_full`,
//! `error`) carry no `seq`. Unknown fields are ignored on receipt.

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::moderator::ModeratorAction;

pub const SERVER_SENDER: &str = "server";
pub const MODERATOR_SENDER: &str = "Moderator";

pub mod codes {
    pub const MALFORMED: &str = "malformed";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const UNKNOWN_ROOM: &str = "unknown_room";
    pub const NOT_MEMBER: &str = "not_member";
    pub const ALREADY_JOINED: &str = "already_joined";
    pub const ALREADY_STARTED: &str = "already_started";
    pub const WRONG_PHASE: &str = "wrong_phase";
    pub const NAME_INVALID: &str = "name_invalid";
    pub const EMPTY_MESSAGE: &str = "empty_message";
    pub const NO_PASSAGE: &str = "no_passage";
    pub const SERVER_BUSY: &str = "server_busy";
    pub const PROVIDER_FAILURE: &str = "provider_failure";
    pub const SHUTTING_DOWN: &str = "shutting_down";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub room_id: String,
    #[serde(default)]
    pub sender: String,
    #[serde(default = "empty_object")]
    pub payload: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(default)]
    pub ts: u64,
}

fn empty_object() -> Value {
    Value::Object(Map::new())
}

impl Envelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let env: Envelope = serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
        if !env.payload.is_object() {
            return Err(ProtocolError::Malformed("payload must be an object".into()));
        }
        Ok(env)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error("unknown event type {0:?}")]
    UnknownType(String),
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            ProtocolError::Malformed(_) => codes::MALFORMED,
            ProtocolError::UnknownType(_) => codes::UNKNOWN_TYPE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ClientEvent {
    CreateRoom {
        display_name: String,
    },
    JoinRoom {
        room_id: String,
        display_name: String,
        /// Replay the room stream from this seq before live delivery.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        backfill_from: Option<u64>,
    },
    PostMessage {
        text: String,
    },
    RequestHint {},
    Leave {},
}

pub const CLIENT_TYPES: [&str; 5] = ["create_room", "join_room", "post_message", "request_hint", "leave"];

impl ClientEvent {
    pub fn from_envelope(env: &Envelope) -> Result<Self, ProtocolError> {
        if !CLIENT_TYPES.contains(&env.kind.as_str()) {
            return Err(ProtocolError::UnknownType(env.kind.clone()));
        }
        let mut payload = env.payload.clone();
        // join_room may name the room in the envelope instead of the payload.
        if env.kind == "join_room" && payload.get("room_id").is_none() && !env.room_id.is_empty() {
            payload["room_id"] = Value::String(env.room_id.clone());
        }
        serde_json::from_value(json!({"type": env.kind, "payload": payload}))
            .map_err(|e| ProtocolError::Malformed(format!("{}: {e}", env.kind)))
    }

    pub fn to_envelope(&self, room_id: &str, sender: &str) -> Envelope {
        split(
            serde_json::to_value(self).expect("client event serializes"),
            room_id,
            sender,
            None,
            0,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackStats {
    pub name: String,
    pub message_count: usize,
    pub mean_message_tokens: f64,
    pub prompted_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum ServerEvent {
    RoomCreated {
        room_id: String,
    },
    Joined {
        roster: Vec<String>,
        /// The participant this snapshot announces.
        #[serde(default)]
        display_name: String,
    },
    RoomFull {},
    SessionStarted {
        passage_title: String,
    },
    ChatBroadcast {
        name: String,
        text: String,
    },
    ModeratorMessage {
        text_markdown: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        action: Option<ModeratorAction>,
        #[serde(default)]
        latency_seconds: f64,
    },
    QuestionRevealed {
        index: usize,
        answer: String,
    },
    FeedbackDelivered {
        feedback_text: String,
        stats: FeedbackStats,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<String>,
        #[serde(default)]
        latency_seconds: f64,
    },
    Error {
        code: String,
        detail: String,
    },
}

pub const SERVER_TYPES: [&str; 9] = [
    "room_created",
    "joined",
    "room_full",
    "session_started",
    "chat_broadcast",
    "moderator_message",
    "question_revealed",
    "feedback_delivered",
    "error",
];

fn split(tagged: Value, room_id: &str, sender: &str, seq: Option<u64>, ts: u64) -> Envelope {
    let Value::Object(mut map) = tagged else {
        unreachable!("adjacently tagged enums serialize to objects")
    };
    let kind = match map.remove("type") {
        Some(Value::String(s)) => s,
        _ => unreachable!("tag is a string"),
    };
    Envelope {
        kind,
        room_id: room_id.to_string(),
        sender: sender.to_string(),
        payload: map.remove("payload").unwrap_or_else(empty_object),
        seq,
        ts,
    }
}

impl ServerEvent {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerEvent::Error {
            code: code.to_string(),
            detail: detail.into(),
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            ServerEvent::RoomCreated { .. } => "room_created",
            ServerEvent::Joined { .. } => "joined",
            ServerEvent::RoomFull {} => "room_full",
            ServerEvent::SessionStarted { .. } => "session_started",
            ServerEvent::ChatBroadcast { .. } => "chat_broadcast",
            ServerEvent::ModeratorMessage { .. } => "moderator_message",
            ServerEvent::QuestionRevealed { .. } => "question_revealed",
            ServerEvent::FeedbackDelivered { .. } => "feedback_delivered",
            ServerEvent::Error { .. } => "error",
        }
    }

    /// The `sender` field for this event.
    pub fn sender(&self) -> &str {
        match self {
            ServerEvent::ChatBroadcast { name, .. } => name,
            ServerEvent::ModeratorMessage { .. } | ServerEvent::QuestionRevealed { .. } => MODERATOR_SENDER,
            ServerEvent::FeedbackDelivered { .. } => MODERATOR_SENDER,
            _ => SERVER_SENDER,
        }
    }

    pub fn to_envelope(&self, room_id: &str, seq: Option<u64>, ts: u64) -> Envelope {
        split(
            serde_json::to_value(self).expect("server event serializes"),
            room_id,
            self.sender(),
            seq,
            ts,
        )
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, ProtocolError> {
        if !SERVER_TYPES.contains(&env.kind.as_str()) {
            return Err(ProtocolError::UnknownType(env.kind.clone()));
        }
        serde_json::from_value(json!({"type": env.kind, "payload": env.payload}))
            .map_err(|e| ProtocolError::Malformed(format!("{}: {e}", env.kind)))
    }
}
