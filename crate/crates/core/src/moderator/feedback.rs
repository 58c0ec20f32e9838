use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::history::Role;
use super::policy::ModeratorAction;
use super::render::{project, DEFAULT_MAX_OUTPUT_TOKENS};
use super::transcript::Transcript;
use crate::provider::{timed_generate, Provider, ProviderRequest};
use crate::session::Room;

pub const FEEDBACK_SYSTEM_PROMPT: &str = "You are the moderator of a group reading discussion for primary and lower secondary school students. The discussion has ended. Using the entire conversation, write short, kind and specific feedback for one student: what they did well, and one or two concrete ways to take part more effectively next time. Address the student by name. Respond in properly formatted Markdown.";

/// Participation statistics recomputable from the archive alone.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StudentStats {
    pub message_count: usize,
    pub mean_message_tokens: f64,
    pub prompted_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEntry {
    pub feedback_text: String,
    #[serde(flatten)]
    pub stats: StudentStats,
    /// Set when the provider call for this student failed; `feedback_text`
    /// is then empty.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub per_student: BTreeMap<String, FeedbackEntry>,
}

impl FeedbackReport {
    pub fn failures(&self) -> impl Iterator<Item = (&String, &str)> {
        self.per_student
            .iter()
            .filter_map(|(n, e)| e.error.as_deref().map(|err| (n, err)))
    }
}

pub fn compute_stats(archive: &Transcript, name: &str) -> StudentStats {
    let mut count = 0usize;
    let mut tokens = 0usize;
    let mut prompted = 0usize;
    for e in archive.entries() {
        match e.role {
            Role::Student if e.author_name == name => {
                count += 1;
                tokens += e.token_len;
            }
            Role::System => {
                if let Some(ModeratorAction::PromptStudent { name: target }) =
                    ModeratorAction::from_marker(&e.author_name, &e.text)
                {
                    if target == name {
                        prompted += 1;
                    }
                }
            }
            _ => {}
        }
    }
    StudentStats {
        message_count: count,
        mean_message_tokens: if count == 0 { 0.0 } else { tokens as f64 / count as f64 },
        prompted_count: prompted,
    }
}

pub fn feedback_request(name: &str, archive: &Transcript) -> ProviderRequest {
    let stats = compute_stats(archive, name);
    ProviderRequest {
        key: format!("feedback:{name}"),
        system_prompt: FEEDBACK_SYSTEM_PROMPT.to_string(),
        messages: project(archive.entries().iter()),
        directive: format!(
            "Write personal feedback for {name}. They sent {} message(s) and were prompted {} time(s).",
            stats.message_count, stats.prompted_count
        ),
        bindings: BTreeMap::from([
            ("name".to_string(), name.to_string()),
            ("message_count".to_string(), stats.message_count.to_string()),
            ("prompted_count".to_string(), stats.prompted_count.to_string()),
        ]),
        max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
    }
}

/// Feedback for `names`, one provider call each, in order. A failed call
/// yields an entry with `error` set instead of failing the report.
pub async fn generate_feedback_for(names: &[String], archive: &Transcript, provider: &dyn Provider) -> FeedbackReport {
    let mut report = FeedbackReport::default();
    for name in names {
        let stats = compute_stats(archive, name);
        let entry = match timed_generate(provider, &feedback_request(name, archive)).await {
            Ok(resp) => FeedbackEntry {
                feedback_text: resp.text,
                stats,
                error: None,
            },
            Err(e) => FeedbackEntry {
                feedback_text: String::new(),
                stats,
                error: Some(e.to_string()),
            },
        };
        report.per_student.insert(name.clone(), entry);
    }
    report
}

/// Feedback for every participant of `room`, from the untrimmed archive.
pub async fn generate_feedback(room: &Room, archive: &Transcript, provider: &dyn Provider) -> FeedbackReport {
    generate_feedback_for(&room.roster(), archive, provider).await
}
