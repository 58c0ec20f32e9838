use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::tokens::count_tokens;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Moderator,
    Student,
    System,
}

impl Role {
    pub fn as_str(&self) -> &'static str {
        match self {
            Role::Moderator => "moderator",
            Role::Student => "student",
            Role::System => "system",
        }
    }

    pub fn parse(token: &str) -> Option<Self> {
        match token {
            "moderator" => Some(Role::Moderator),
            "student" => Some(Role::Student),
            "system" => Some(Role::System),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub role: Role,
    pub author_name: String,
    pub text: String,
    pub token_len: usize,
    pub seq: u64,
    pub ts: u64,
}

impl HistoryEntry {
    pub fn new(role: Role, author_name: impl Into<String>, text: impl Into<String>, seq: u64, ts: u64) -> Self {
        let text = text.into();
        HistoryEntry {
            role,
            author_name: author_name.into(),
            token_len: count_tokens(&text),
            text,
            seq,
            ts,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrimReport {
    pub removed: usize,
    /// The newest entry plus the system prompt alone exceed the budget.
    pub over_budget: bool,
}

/// Provider context window: a pinned system prompt followed by the most
/// recent entries that fit in `budget` tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationHistory {
    system_entry: HistoryEntry,
    entries: VecDeque<HistoryEntry>,
    token_total: usize,
    budget: usize,
}

impl ConversationHistory {
    pub fn new(system_prompt: impl Into<String>, budget: usize, ts: u64) -> Self {
        let system_entry = HistoryEntry::new(Role::System, "system", system_prompt, 0, ts);
        ConversationHistory {
            token_total: system_entry.token_len,
            system_entry,
            entries: VecDeque::new(),
            budget: budget.max(1),
        }
    }

    pub fn system_entry(&self) -> &HistoryEntry {
        &self.system_entry
    }

    pub fn entries(&self) -> impl ExactSizeIterator<Item = &HistoryEntry> {
        self.entries.iter()
    }

    pub fn token_total(&self) -> usize {
        self.token_total
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Appends `entry`, then drops whole entries oldest-first until the
    /// total fits the budget. The system prompt and the entry just appended
    /// are never dropped; if those two alone exceed the budget the result is
    /// flagged `over_budget`.
    ///
    /// Panics if `entry.seq` does not follow the last entry's seq.
    pub fn append_and_trim(&mut self, entry: HistoryEntry) -> TrimReport {
        if let Some(last) = self.entries.back() {
            assert!(
                entry.seq > last.seq,
                "history seq must increase: {} after {}",
                entry.seq,
                last.seq
            );
        }
        self.token_total += entry.token_len;
        self.entries.push_back(entry);

        let mut removed = 0;
        while self.token_total > self.budget && self.entries.len() > 1 {
            let dropped = self.entries.pop_front().expect("len > 1");
            self.token_total -= dropped.token_len;
            removed += 1;
        }
        let over_budget = self.token_total > self.budget;
        if over_budget {
            tracing::warn!(
                total = self.token_total,
                budget = self.budget,
                "history over budget after trimming"
            );
        }
        TrimReport { removed, over_budget }
    }
}
