//! Untrimmed, sequence-numbered session archive.
//!
//! On disk it is a tab-separated file, one entry per line:
//!
//! ```text
//! # discourse transcript v1
//! seq<TAB>ts<TAB>role<TAB>name<TAB>token_len<TAB>text
//! ```
//!
//! `role` is `moderator`, `student` or `system`. In `name` and `text`,
//! backslash, tab, newline and carriage return are written as `\\`, `\t`,
//! `\n` and `\r`. Lines starting with `#` are comments.
//!
//! `system` entries are structural markers that never reach the provider
//! context: `joined`, `left`, `hint_request`, `prompt_expired` (with the
//! participant in `name`) and one entry per moderator action, written
//! just before the moderator's text (see [`marker`]).

use std::fmt::Write as _;

use thiserror::Error;

use super::history::{HistoryEntry, Role};
use super::policy::ModeratorAction;
use super::tokens::count_tokens;

pub const TRANSCRIPT_HEADER: &str = "# discourse transcript v1";

pub mod marker {
    pub const JOINED: &str = "joined";
    pub const LEFT: &str = "left";
    pub const HINT_REQUEST: &str = "hint_request";
    pub const PROMPT_EXPIRED: &str = "prompt_expired";
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("transcript line {line}: {message}")]
pub struct TranscriptError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<HistoryEntry>,
}

impl ModeratorAction {
    /// `(name, text)` of the system marker recorded for this action.
    pub fn marker(&self) -> (String, String) {
        match self {
            ModeratorAction::AskQuestion { index } | ModeratorAction::RevealAnswer { index } => {
                (String::new(), format!("{} {index}", self.kind()))
            }
            ModeratorAction::PromptStudent { name } | ModeratorAction::GiveHint { name } => {
                (name.clone(), self.kind().to_string())
            }
            _ => (String::new(), self.kind().to_string()),
        }
    }

    pub fn from_marker(name: &str, text: &str) -> Option<Self> {
        let (kind, arg) = match text.split_once(' ') {
            Some((k, a)) => (k, Some(a)),
            None => (text, None),
        };
        let index = || arg.and_then(|a| a.parse().ok());
        Some(match kind {
            "open_discussion" => ModeratorAction::OpenDiscussion,
            "present_passage" => ModeratorAction::PresentPassage,
            "ask_question" => ModeratorAction::AskQuestion { index: index()? },
            "reveal_answer" => ModeratorAction::RevealAnswer { index: index()? },
            "prompt_student" => ModeratorAction::PromptStudent { name: name.to_string() },
            "give_hint" => ModeratorAction::GiveHint { name: name.to_string() },
            "wrap_up" => ModeratorAction::WrapUp,
            _ => return None,
        })
    }
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[HistoryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.entries.last().map_or(0, |e| e.seq + 1)
    }

    /// Appends an entry with the next sequence number and returns it.
    pub fn push(&mut self, role: Role, name: impl Into<String>, text: impl Into<String>, ts: u64) -> HistoryEntry {
        let entry = HistoryEntry::new(role, name, text, self.next_seq(), ts);
        self.entries.push(entry.clone());
        entry
    }

    pub fn push_action(&mut self, action: &ModeratorAction, ts: u64) -> HistoryEntry {
        let (name, text) = action.marker();
        self.push(Role::System, name, text, ts)
    }

    /// Participants in join order, from `joined` markers.
    pub fn participants(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for e in &self.entries {
            if e.role == Role::System && e.text == marker::JOINED && !names.contains(&e.author_name) {
                names.push(e.author_name.clone());
            }
        }
        names
    }

    /// Moderator actions in order, recovered from their markers.
    pub fn actions(&self) -> impl Iterator<Item = (u64, ModeratorAction)> + '_ {
        self.entries
            .iter()
            .filter(|e| e.role == Role::System)
            .filter_map(|e| ModeratorAction::from_marker(&e.author_name, &e.text).map(|a| (e.seq, a)))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        out.push_str(TRANSCRIPT_HEADER);
        out.push('\n');
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                e.seq,
                e.ts,
                e.role.as_str(),
                escape(&e.author_name),
                e.token_len,
                escape(&e.text)
            );
        }
        out
    }

    pub fn parse(input: &str) -> Result<Self, TranscriptError> {
        let mut entries: Vec<HistoryEntry> = Vec::new();
        for (idx, raw) in input.lines().enumerate() {
            let line = idx + 1;
            let err = |message: String| TranscriptError { line, message };
            if raw.trim().is_empty() || raw.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 tab-separated fields, found {}", fields.len())));
            }
            let seq: u64 = fields[0].parse().map_err(|_| err(format!("bad seq {:?}", fields[0])))?;
            let ts: u64 = fields[1].parse().map_err(|_| err(format!("bad ts {:?}", fields[1])))?;
            let role = Role::parse(fields[2]).ok_or_else(|| err(format!("unknown role {:?}", fields[2])))?;
            let name = unescape(fields[3]).map_err(err)?;
            let token_len: usize = fields[4]
                .parse()
                .map_err(|_| err(format!("bad token_len {:?}", fields[4])))?;
            let text = unescape(fields[5]).map_err(err)?;
            if token_len != count_tokens(&text) {
                return Err(err(format!(
                    "token_len {token_len} does not match text ({})",
                    count_tokens(&text)
                )));
            }
            if let Some(last) = entries.last() {
                if seq <= last.seq {
                    return Err(err(format!("seq {seq} does not follow {}", last.seq)));
                }
            }
            entries.push(HistoryEntry {
                role,
                author_name: name,
                text,
                token_len,
                seq,
                ts,
            });
        }
        Ok(Transcript { entries })
    }
}

impl FromIterator<HistoryEntry> for Transcript {
    fn from_iter<T: IntoIterator<Item = HistoryEntry>>(iter: T) -> Self {
        Transcript {
            entries: iter.into_iter().collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_role_reports_line() {
        let text = format!("{TRANSCRIPT_HEADER}\n0\t1\tstudent\tA\t1\thi\n1\t2\tteacher\tB\t1\thi\n");
        let err = Transcript::parse(&text).unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.message.contains("teacher"));
    }

    #[test]
    fn markers_round_trip_actions() {
        let actions = [
            ModeratorAction::OpenDiscussion,
            ModeratorAction::PresentPassage,
            ModeratorAction::AskQuestion { index: 2 },
            ModeratorAction::PromptStudent {
                name: "Mary Ann".into(),
            },
            ModeratorAction::GiveHint { name: "Jo".into() },
            ModeratorAction::RevealAnswer { index: 0 },
            ModeratorAction::WrapUp,
        ];
        for a in actions {
            let (name, text) = a.marker();
            assert_eq!(ModeratorAction::from_marker(&name, &text), Some(a));
        }
    }

    #[test]
    fn participants_in_join_order() {
        let mut t = Transcript::new();
        t.push(Role::System, "B", marker::JOINED, 0);
        t.push(Role::System, "A", marker::JOINED, 1);
        t.push(Role::Student, "A", "hi", 2);
        assert_eq!(t.participants(), ["B", "A"]);
    }

    proptest! {
        #[test]
        fn tsv_round_trip(rows in prop::collection::vec((0u8..3, "[^\u{0}]{0,12}", "\\PC{0,40}|[\\\\\t\n\r a-z]{0,20}"), 0..20)) {
            let mut t = Transcript::new();
            for (i, (role, name, text)) in rows.iter().enumerate() {
                let role = [Role::Moderator, Role::Student, Role::System][*role as usize];
                t.push(role, name.clone(), text.clone(), i as u64 * 7);
            }
            let parsed = Transcript::parse(&t.to_tsv()).unwrap();
            prop_assert_eq!(parsed, t);
        }
    }
}
