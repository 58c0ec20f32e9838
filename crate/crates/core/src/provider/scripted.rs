use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{fill_template, key_matches, Provider, ProviderError, ProviderRequest, ProviderResponse};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptRule {
    /// Glob over the request key, e.g. `ask:*`.
    #[serde(rename = "match")]
    pub pattern: String,
    /// Reply template; `{binding}` placeholders are filled from the request.
    pub response: String,
}

#[derive(Debug, Clone, Default, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    fallback: Option<String>,
    #[serde(default, rename = "rule")]
    rules: Vec<ScriptRule>,
}

/// Table-driven backend: the first rule whose pattern matches the request
/// key answers. A pure function of the request.
#[derive(Debug, Clone, Default)]
pub struct ScriptedProvider {
    rules: Vec<ScriptRule>,
    fallback: Option<String>,
}

impl ScriptedProvider {
    pub fn new(rules: Vec<ScriptRule>) -> Self {
        ScriptedProvider { rules, fallback: None }
    }

    pub fn with_fallback(mut self, template: impl Into<String>) -> Self {
        self.fallback = Some(template.into());
        self
    }

    pub fn rule(mut self, pattern: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push(ScriptRule {
            pattern: pattern.into(),
            response: response.into(),
        });
        self
    }

    /// Reads a TOML rule file: optional top-level `fallback` and an ordered
    /// `[[rule]]` array of `{ match, response }`.
    pub fn from_toml(text: &str) -> Result<Self, ProviderError> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(ScriptedProvider {
            rules: file.rules,
            fallback: file.fallback,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }

    /// A complete moderator script that works for any passage, used when
    /// no provider is configured.
    pub fn demo_moderator() -> Self {
        ScriptedProvider::default()
            .rule(
                "open",
                "Hello {names}! I'm your **Moderator** today. We'll read a short passage together and talk about it. Everyone's ideas matter here, so please share what you think.",
            )
            .rule("present_passage", "### {title}\n\n{passage}")
            .rule("ask:*", "**Question {number}:** {question}\n\nWhat do you all think?")
            .rule("prompt:*", "What do you think, {name}?")
            .rule("hint:*", "Here's a hint, {name}: look closely at the passage again and think about *why* things happen.")
            .rule("reveal:*", "Thank you all for sharing! The answer to question {number} is: **{answer}**")
            .rule("wrap_up", "Great discussion, everyone! Thank you for taking part. Your personal feedback is on its way.")
            .rule("feedback:*", "Thank you for joining the discussion, {name}. Keep sharing your ideas!")
    }

    fn respond(&self, request: &ProviderRequest) -> Result<String, ProviderError> {
        let template = self
            .rules
            .iter()
            .find(|r| key_matches(&r.pattern, &request.key))
            .map(|r| r.response.as_str())
            .or(self.fallback.as_deref())
            .ok_or_else(|| ProviderError::NoScriptEntry {
                key: request.key.clone(),
            })?;
        Ok(fill_template(template, &request.bindings))
    }
}

#[async_trait]
impl Provider for ScriptedProvider {
    fn tag(&self) -> String {
        "scripted".into()
    }

    async fn generate(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        Ok(ProviderResponse {
            text: self.respond(request)?,
            latency_seconds: 0.0,
            provider_tag: self.tag(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    pub(crate) fn request(key: &str) -> ProviderRequest {
        ProviderRequest {
            key: key.into(),
            system_prompt: String::new(),
            messages: vec![],
            directive: String::new(),
            bindings: BTreeMap::from([("name".into(), "Ethan".into())]),
            max_output_tokens: 64,
        }
    }

    #[tokio::test]
    async fn table_lookup_returns_exact_text() {
        let p = ScriptedProvider::default().rule("ask:0", "What did the cat do?");
        let r = p.generate(&request("ask:0")).await.unwrap();
        assert_eq!(r.text, "What did the cat do?");
        assert!(r.latency_seconds < 0.01);
        assert!(matches!(
            p.generate(&request("ask:1")).await,
            Err(ProviderError::NoScriptEntry { .. })
        ));
    }

    #[tokio::test]
    async fn first_matching_rule_wins_and_fallback_applies() {
        let p = ScriptedProvider::from_toml(
            r#"
fallback = "default for {name}"
[[rule]]
match = "prompt:Ethan"
response = "Ethan, what do you think?"
[[rule]]
match = "prompt:*"
response = "generic"
"#,
        )
        .unwrap();
        assert_eq!(
            p.generate(&request("prompt:Ethan")).await.unwrap().text,
            "Ethan, what do you think?"
        );
        assert_eq!(p.generate(&request("prompt:Jo")).await.unwrap().text, "generic");
        assert_eq!(p.generate(&request("open")).await.unwrap().text, "default for Ethan");
    }

    #[tokio::test]
    async fn identical_requests_identical_responses() {
        let p = ScriptedProvider::demo_moderator();
        for key in ["open", "ask:0", "prompt:Ethan", "feedback:Ethan"] {
            let a = p.generate(&request(key)).await.unwrap();
            let b = p.generate(&request(key)).await.unwrap();
            assert_eq!(a.text, b.text);
        }
    }
}
