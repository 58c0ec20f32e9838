use std::collections::BTreeMap;

use super::history::{ConversationHistory, HistoryEntry, Role, TrimReport};
use super::policy::ModeratorAction;
use super::transcript::Transcript;
use crate::provider::{timed_generate, ChatMessage, Provider, ProviderError, ProviderRequest, ProviderResponse};
use crate::session::Room;

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 400;

pub(crate) fn project(entries: impl Iterator<Item = impl std::borrow::Borrow<HistoryEntry>>) -> Vec<ChatMessage> {
    entries
        .filter_map(|e| {
            let e = e.borrow();
            (e.role != Role::System).then(|| ChatMessage {
                role: e.role,
                name: e.author_name.clone(),
                text: e.text.clone(),
            })
        })
        .collect()
}

fn directive(action: &ModeratorAction, b: &BTreeMap<String, String>) -> String {
    let get = |k: &str| b.get(k).map(String::as_str).unwrap_or("");
    match action {
        ModeratorAction::OpenDiscussion => format!(
            "Start the discussion. Introduce yourself as Moderator, explain the purpose of the discussion and welcome {}.",
            get("names")
        ),
        ModeratorAction::PresentPassage => format!(
            "Present the passage \"{}\" to the students and make sure they understand it. Do not ask a question yet.",
            get("title")
        ),
        ModeratorAction::AskQuestion { .. } => format!(
            "Present question {} to the group and invite responses: {}",
            get("number"),
            get("question")
        ),
        ModeratorAction::PromptStudent { name } => format!(
            "{name} has not responded to the current question yet. Encourage them with a supportive prompt such as \"What do you think, {name}?\" Do not reveal the answer."
        ),
        ModeratorAction::GiveHint { name } => format!(
            "{name} asked for a hint on the current question ({}). Give a helpful hint without revealing the answer.",
            get("question")
        ),
        ModeratorAction::RevealAnswer { .. } => format!(
            "Every student has had a chance to respond to question {}. Give constructive feedback on the responses, then reveal the correct answer: {}",
            get("number"),
            get("answer")
        ),
        ModeratorAction::WrapUp => {
            "The discussion is over. Thank the students, briefly summarise what the group discussed and tell them personal feedback is on its way.".to_string()
        }
    }
}

fn bindings(action: &ModeratorAction, room: &Room) -> BTreeMap<String, String> {
    let mut b = BTreeMap::new();
    b.insert("names".to_string(), room.roster().join(", "));
    if let Some(p) = &room.passage {
        b.insert("title".to_string(), p.title.clone());
        b.insert("passage".to_string(), p.body.clone());
    }
    let question = match action {
        ModeratorAction::AskQuestion { index } | ModeratorAction::RevealAnswer { index } => Some(*index),
        ModeratorAction::GiveHint { .. } | ModeratorAction::PromptStudent { .. } => Some(room.question_index),
        _ => None,
    };
    if let Some(index) = question {
        if let Some(qa) = room.passage.as_ref().and_then(|p| p.qa_pairs.get(index)) {
            b.insert("index".to_string(), index.to_string());
            b.insert("number".to_string(), (index + 1).to_string());
            b.insert("question".to_string(), qa.question.clone());
            if matches!(action, ModeratorAction::RevealAnswer { .. }) {
                b.insert("answer".to_string(), qa.answer.clone());
            }
        }
    }
    if let ModeratorAction::PromptStudent { name } | ModeratorAction::GiveHint { name } = action {
        b.insert("name".to_string(), name.clone());
    }
    b
}

/// The provider request that renders `action`: system prompt and trimmed
/// history from `history`, plus the action's directive.
pub fn moderator_request(
    action: &ModeratorAction,
    room: &Room,
    history: &ConversationHistory,
    max_output_tokens: u32,
) -> ProviderRequest {
    let bindings = bindings(action, room);
    ProviderRequest {
        key: action.key(),
        system_prompt: history.system_entry().text.clone(),
        messages: project(history.entries()),
        directive: directive(action, &bindings),
        bindings,
        max_output_tokens,
    }
}

/// Renders `action` through `provider`. On success the marker and the
/// moderator's text are appended to `archive`, and the text to `history`.
/// On failure nothing is appended.
pub async fn render_moderator_message(
    action: &ModeratorAction,
    room: &Room,
    history: &mut ConversationHistory,
    archive: &mut Transcript,
    provider: &dyn Provider,
    ts: u64,
) -> Result<ProviderResponse, ProviderError> {
    let request = moderator_request(action, room, history, DEFAULT_MAX_OUTPUT_TOKENS);
    let response = timed_generate(provider, &request).await?;
    record_moderator_text(action, &response.text, history, archive, ts);
    Ok(response)
}

/// Appends the action marker and the moderator's text to `archive`, and
/// the text to `history`.
pub fn record_moderator_text(
    action: &ModeratorAction,
    text: &str,
    history: &mut ConversationHistory,
    archive: &mut Transcript,
    ts: u64,
) -> TrimReport {
    archive.push_action(action, ts);
    let entry = archive.push(Role::Moderator, "Moderator", text, ts);
    history.append_and_trim(entry)
}
