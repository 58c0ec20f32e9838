//! The moderator: system prompt assembly, token-budgeted conversation
//! history, the turn-taking policy that gates answer reveals, and
//! end-of-session feedback.

mod feedback;
mod history;
mod policy;
mod prompt;
mod render;
mod tokens;
mod transcript;

pub use feedback::{
    compute_stats, feedback_request, generate_feedback, generate_feedback_for, FeedbackEntry, FeedbackReport,
    StudentStats, FEEDBACK_SYSTEM_PROMPT,
};
pub use history::{ConversationHistory, HistoryEntry, Role, TrimReport};
pub use policy::{ModeratorAction, TurnPolicy};
pub use prompt::{build_system_prompt, PromptError, SYSTEM_PROMPT_TEMPLATE};
pub use render::{moderator_request, record_moderator_text, render_moderator_message, DEFAULT_MAX_OUTPUT_TOKENS};
pub use tokens::count_tokens;
pub use transcript::{marker, Transcript, TranscriptError, TRANSCRIPT_HEADER};
