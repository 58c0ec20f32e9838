//! Text-generation boundary.
//!
//! Every backend answers the same [`ProviderRequest`]: the system prompt,
//! the trimmed conversation, and a directive for the action at hand. The
//! request also carries a stable `key` (`ask:0`, `prompt:Ethan`,
//! `feedback:Daniel`, `persona:Jordan`) that scripted and replay backends
//! match on, and `bindings` they may substitute into templated replies.

mod latency;
mod remote;
mod replay;
mod scripted;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::moderator::Role;

pub use latency::{with_injected_latency, InjectedLatency};
pub use remote::{RemoteConfig, RemoteProvider, PROVIDER_KEY_ENV};
pub use replay::{ReplayProvider, ReplayRecord, ReplayScript, REPLAY_VERSION};
pub use scripted::{ScriptRule, ScriptedProvider};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub name: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderRequest {
    pub key: String,
    pub system_prompt: String,
    pub messages: Vec<ChatMessage>,
    pub directive: String,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    pub max_output_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderResponse {
    pub text: String,
    pub latency_seconds: f64,
    pub provider_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider timed out after {attempts} attempt(s) of {deadline_ms} ms")]
    Timeout { deadline_ms: u64, attempts: u32 },
    #[error("remote error {status}: {body}")]
    RemoteError { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("script exhausted at request {key:?}")]
    ScriptExhausted { key: String },
    #[error("no script rule matches {key:?}")]
    NoScriptEntry { key: String },
    #[error("provider returned empty text")]
    EmptyResponse,
    #[error("provider configuration: {0}")]
    Config(String),
}

impl ProviderError {
    /// Whether retrying the same request could succeed.
    pub fn retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Timeout { .. }
                | ProviderError::Transport(_)
                | ProviderError::RemoteError { status: 500.., .. }
        )
    }
}

#[async_trait]
pub trait Provider: Send + Sync {
    fn tag(&self) -> String;

    async fn generate(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError>;
}

pub type SharedProvider = Arc<dyn Provider>;

/// Calls `provider` and stamps the response with the caller-measured
/// latency (request start to response complete, monotonic clock).
pub async fn timed_generate(
    provider: &dyn Provider,
    request: &ProviderRequest,
) -> Result<ProviderResponse, ProviderError> {
    let start = Instant::now();
    let mut response = provider.generate(request).await?;
    response.latency_seconds = start.elapsed().as_secs_f64();
    if response.text.trim().is_empty() {
        return Err(ProviderError::EmptyResponse);
    }
    Ok(response)
}

/// Backend selection as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderConfig {
    /// Rule table from a TOML file; without a path, the built-in demo
    /// moderator script.
    Scripted {
        #[serde(default)]
        path: Option<PathBuf>,
    },
    Replay {
        path: PathBuf,
    },
    Remote(RemoteConfig),
}

impl Default for ProviderConfig {
    fn default() -> Self {
        ProviderConfig::Scripted { path: None }
    }
}

impl ProviderConfig {
    /// Resolves relative paths against `base`.
    pub fn rebase(mut self, base: &std::path::Path) -> Self {
        match &mut self {
            ProviderConfig::Scripted { path: Some(p) } | ProviderConfig::Replay { path: p } if p.is_relative() => {
                *p = base.join(&*p);
            }
            _ => {}
        }
        self
    }

    /// Reads a standalone provider table, e.g. `kind = "replay"` plus
    /// `path`. Relative paths resolve against the file's directory.
    pub fn from_file(path: &std::path::Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let config: ProviderConfig =
            toml::from_str(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Ok(config.rebase(path.parent().unwrap_or(std::path::Path::new("."))))
    }

    /// Builds the backend. Remote backends read the bearer credential from
    /// [`PROVIDER_KEY_ENV`] via `lookup_env`.
    pub fn build_with_env<F>(&self, lookup_env: F) -> Result<SharedProvider, ProviderError>
    where
        F: Fn(&str) -> Option<String>,
    {
        Ok(match self {
            ProviderConfig::Scripted { path: None } => Arc::new(ScriptedProvider::demo_moderator()),
            ProviderConfig::Scripted { path: Some(p) } => Arc::new(ScriptedProvider::from_file(p)?),
            ProviderConfig::Replay { path } => Arc::new(ReplayProvider::from_file(path)?),
            ProviderConfig::Remote(cfg) => {
                let key = lookup_env(PROVIDER_KEY_ENV)
                    .filter(|k| !k.trim().is_empty())
                    .ok_or_else(|| ProviderError::Config(format!("{PROVIDER_KEY_ENV} is not set")))?;
                Arc::new(RemoteProvider::new(cfg.clone(), key)?)
            }
        })
    }

    pub fn build(&self) -> Result<SharedProvider, ProviderError> {
        self.build_with_env(|k| std::env::var(k).ok())
    }
}

/// Substitutes `{name}` style placeholders from `bindings`. Unknown
/// placeholders are left as written.
pub fn fill_template(template: &str, bindings: &BTreeMap<String, String>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if bindings.contains_key(&after[..close]) => {
                out.push_str(&bindings[&after[..close]]);
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}

/// Glob match where `*` stands for any run of characters.
pub fn key_matches(pattern: &str, key: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == key;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !key.starts_with(first) || key.len() < first.len() + last.len() || !key.ends_with(last) {
        return false;
    }
    let mut cursor = first.len();
    let end = key.len() - last.len();
    for mid in &parts[1..parts.len() - 1] {
        match key[cursor..end].find(mid) {
            Some(pos) => cursor += pos + mid.len(),
            None => return false,
        }
    }
    true
}
