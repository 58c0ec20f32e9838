use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{ChatMessage, Provider, ProviderError, ProviderRequest, ProviderResponse};
use crate::moderator::Role;

/// Environment variable holding the bearer credential.
pub const PROVIDER_KEY_ENV: &str = "DISCOURSE_PROVIDER_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base of a chat-completions style API; `/chat/completions` is appended.
    pub base_url: String,
    pub model_name: String,
    pub deadline_seconds: f64,
    /// Extra attempts after a timeout.
    pub retry_count: u32,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "https://api.openai.com/v1".into(),
            model_name: "gpt-4o".into(),
            deadline_seconds: 30.0,
            retry_count: 1,
        }
    }
}

pub struct RemoteProvider {
    config: RemoteConfig,
    key: String,
    client: reqwest::Client,
}

fn wire_message(m: &ChatMessage) -> Value {
    match m.role {
        Role::Moderator => json!({"role": "assistant", "content": m.text}),
        Role::Student => json!({"role": "user", "content": format!("{}: {}", m.name, m.text)}),
        Role::System => json!({"role": "system", "content": m.text}),
    }
}

/// Chat-completions request body for `request`.
pub(crate) fn request_body(model: &str, request: &ProviderRequest) -> Value {
    let mut messages = Vec::with_capacity(request.messages.len() + 2);
    messages.push(json!({"role": "system", "content": request.system_prompt}));
    messages.extend(request.messages.iter().map(wire_message));
    messages.push(json!({"role": "system", "content": request.directive}));
    json!({
        "model": model,
        "messages": messages,
        "max_tokens": request.max_output_tokens,
    })
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    match body.char_indices().nth(MAX) {
        Some((cut, _)) => format!("{}...", &body[..cut]),
        None => body.to_string(),
    }
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig, key: String) -> Result<Self, ProviderError> {
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN must fail too
        if !(config.deadline_seconds > 0.0) {
            return Err(ProviderError::Config("deadline_seconds must be positive".into()));
        }
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(RemoteProvider { config, key, client })
    }

    fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'))
    }

    async fn attempt(&self, body: &Value) -> Result<String, ProviderError> {
        let deadline = Duration::from_secs_f64(self.config.deadline_seconds);
        let call = async {
            let resp = self
                .client
                .post(self.endpoint())
                .bearer_auth(&self.key)
                .json(body)
                .send()
                .await
                .map_err(|e| ProviderError::Transport(e.to_string()))?;
            let status = resp.status();
            let text = resp.text().await.map_err(|e| ProviderError::Transport(e.to_string()))?;
            if !status.is_success() {
                return Err(ProviderError::RemoteError {
                    status: status.as_u16(),
                    body: excerpt(&text),
                });
            }
            let parsed: Value = serde_json::from_str(&text)
                .map_err(|e| ProviderError::Transport(format!("invalid response JSON: {e}")))?;
            parsed
                .pointer("/choices/0/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| ProviderError::Transport(format!("no choices[0].message.content in {}", excerpt(&text))))
        };
        match tokio::time::timeout(deadline, call).await {
            Ok(result) => result,
            Err(_) => Err(ProviderError::Timeout {
                deadline_ms: deadline.as_millis() as u64,
                attempts: 1,
            }),
        }
    }
}

#[async_trait]
impl Provider for RemoteProvider {
    fn tag(&self) -> String {
        format!("remote:{}", self.config.model_name)
    }

    async fn generate(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let body = request_body(&self.config.model_name, request);
        let start = std::time::Instant::now();
        let attempts = self.config.retry_count + 1;
        for attempt in 1..=attempts {
            match self.attempt(&body).await {
                Ok(text) => {
                    return Ok(ProviderResponse {
                        text,
                        latency_seconds: start.elapsed().as_secs_f64(),
                        provider_tag: self.tag(),
                    })
                }
                Err(ProviderError::Timeout { deadline_ms, .. }) if attempt == attempts => {
                    return Err(ProviderError::Timeout { deadline_ms, attempts })
                }
                Err(ProviderError::Timeout { .. }) => {
                    tracing::warn!(attempt, "provider timed out, retrying");
                }
                Err(other) => return Err(other),
            }
        }
        unreachable!("loop returns on the last attempt")
    }
}
