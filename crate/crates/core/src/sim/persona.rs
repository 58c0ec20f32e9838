use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::provider::{timed_generate, ChatMessage, ProviderRequest, SharedProvider};

/// Script line meaning "stay silent this turn".
pub const SILENT: &str = "<silent>";
/// Script line meaning "ask the moderator for a hint this turn".
pub const HINT: &str = "<hint>";
pub const PASSIVE_DEFAULT: &str = "I don't know";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Passive,
    Toxic,
    #[serde(alias = "offtopic")]
    OffTopic,
    Constructive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseSource {
    /// Script file, one response per line.
    Scripted(PathBuf),
    /// Name of a `[backends.<name>]` provider.
    Backend(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub name: String,
    pub archetype: Archetype,
    #[serde(default)]
    pub identity_directives: String,
    #[serde(default)]
    pub context_rule: String,
    #[serde(default)]
    pub response_constraints: String,
    /// Absent only for passive personas, which then always answer
    /// [`PASSIVE_DEFAULT`].
    #[serde(default)]
    pub source: Option<ResponseSource>,
}

impl PersonaSpec {
    pub fn system_prompt(&self) -> String {
        [
            &self.identity_directives,
            &self.context_rule,
            &self.response_constraints,
        ]
        .iter()
        .map(|s| s.trim())
        .collect::<Vec<_>>()
        .join("\n\n")
    }

    pub(crate) fn validate(&self, allow_unsafe: bool) -> Result<(), SimError> {
        if self.name.trim().is_empty() {
            return Err(SimError::Config("persona name must not be empty".into()));
        }
        match &self.source {
            None if self.archetype != Archetype::Passive => Err(SimError::Config(format!(
                "persona {}: only passive personas may omit `source`",
                self.name
            ))),
            Some(ResponseSource::Backend(_)) => {
                for (part, text) in [
                    ("identity_directives", &self.identity_directives),
                    ("context_rule", &self.context_rule),
                    ("response_constraints", &self.response_constraints),
                ] {
                    if text.trim().is_empty() {
                        return Err(SimError::Config(format!(
                            "persona {}: `{part}` is required for backend-sourced personas",
                            self.name
                        )));
                    }
                }
                if self.archetype == Archetype::Toxic && !allow_unsafe {
                    return Err(SimError::UnsafePersona(self.name.clone()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// What a persona does on its turn.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Move {
    Say(String),
    Silent,
    RequestHint,
}

impl Move {
    fn from_line(line: &str) -> Self {
        match line.trim() {
            SILENT => Move::Silent,
            HINT => Move::RequestHint,
            text => Move::Say(text.to_string()),
        }
    }
}

/// Reads a persona script: one response per line; blank lines and lines
/// starting with `#` are skipped.
pub fn read_script(path: &Path) -> Result<Vec<String>, SimError> {
    let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect())
}

enum Source {
    Script(VecDeque<String>),
    PassiveDefault,
    Backend(SharedProvider),
}

/// A persona bound to its response source.
pub struct PersonaAgent {
    pub spec: PersonaSpec,
    source: Source,
}

impl PersonaAgent {
    pub(crate) fn bind(
        spec: PersonaSpec,
        base: &Path,
        backends: &BTreeMap<String, SharedProvider>,
    ) -> Result<Self, SimError> {
        let source = match &spec.source {
            None => Source::PassiveDefault,
            Some(ResponseSource::Scripted(path)) => Source::Script(read_script(&base.join(path))?.into()),
            Some(ResponseSource::Backend(name)) => Source::Backend(
                backends
                    .get(name)
                    .cloned()
                    .ok_or_else(|| SimError::Config(format!("persona {}: no backend named {name:?}", spec.name)))?,
            ),
        };
        Ok(PersonaAgent { spec, source })
    }

    pub fn scripted(spec: PersonaSpec, lines: Vec<String>) -> Self {
        PersonaAgent {
            spec,
            source: Source::Script(lines.into()),
        }
    }

    /// The persona's next move given what it has seen so far.
    pub async fn respond(&mut self, visible: &[ChatMessage], directive: &str) -> Result<Move, SimError> {
        match &mut self.source {
            Source::Script(lines) => match lines.pop_front() {
                Some(line) => Ok(Move::from_line(&line)),
                None if self.spec.archetype == Archetype::Passive => Ok(Move::Say(PASSIVE_DEFAULT.into())),
                None => Err(SimError::ScriptExhausted {
                    persona: self.spec.name.clone(),
                }),
            },
            Source::PassiveDefault => Ok(Move::Say(PASSIVE_DEFAULT.into())),
            Source::Backend(provider) => {
                let request = ProviderRequest {
                    key: format!("persona:{}", self.spec.name),
                    system_prompt: self.spec.system_prompt(),
                    messages: visible.to_vec(),
                    directive: directive.to_string(),
                    bindings: BTreeMap::from([("name".to_string(), self.spec.name.clone())]),
                    max_output_tokens: 120,
                };
                let response = timed_generate(provider.as_ref(), &request)
                    .await
                    .map_err(|e| SimError::Provider {
                        who: self.spec.name.clone(),
                        source: e,
                    })?;
                Ok(Move::from_line(&response.text))
            }
        }
    }
}
