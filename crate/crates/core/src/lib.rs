//! Core of the discourse server: capacity-bounded discussion rooms, a
//! turn-taking moderator engine driven by a pluggable text-generation
//! provider, the realtime websocket gateway, and a persona simulation
//! harness that exercises the whole stack over the wire.

pub mod clock;
pub mod config;
pub mod dataset;
pub mod engine;
pub mod gateway;
pub mod moderator;
pub mod provider;
pub mod session;
pub mod sim;

pub use clock::{Clock, LogicalClock, SystemClock};
pub use config::{ConfigError, ServerConfig};
pub use dataset::{Dataset, DatasetError, DatasetFormat, Passage, QaKind, QaPair, ValidationReport};
pub use engine::{EngineConfig, Output, RoomEngine};
pub use gateway::protocol::{ClientEvent, Envelope, ServerEvent};
pub use moderator::{
    count_tokens, ConversationHistory, FeedbackReport, HistoryEntry, ModeratorAction, Role, Transcript,
};
pub use provider::{Provider, ProviderError, ProviderRequest, ProviderResponse, SharedProvider};
pub use session::{JoinOutcome, Participant, ParticipantId, Room, RoomId, SessionError, SessionPhase};
