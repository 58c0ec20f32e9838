use std::path::Path;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use std::sync::Mutex;

use super::{fill_template, key_matches, Provider, ProviderError, ProviderRequest, ProviderResponse};

/// Current replay file version.
pub const REPLAY_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayRecord {
    /// Glob over the request key (`ask:0`, `persona:Jordan`, `feedback:*`).
    #[serde(rename = "match")]
    pub pattern: String,
    pub response: String,
}

/// On-disk replay script:
///
/// ```json
/// {"version": 1, "records": [{"match": "persona:Jordan", "response": "..."}]}
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayScript {
    pub version: u32,
    pub records: Vec<ReplayRecord>,
}

/// Plays recorded responses back in order. Each request consumes the
/// earliest unconsumed record whose pattern matches its key, so several
/// speakers can share one recording as long as each speaker's own lines
/// are in order.
#[derive(Debug)]
pub struct ReplayProvider {
    records: Vec<ReplayRecord>,
    consumed: Mutex<Vec<bool>>,
}

impl ReplayProvider {
    pub fn new(script: ReplayScript) -> Result<Self, ProviderError> {
        if script.version != REPLAY_VERSION {
            return Err(ProviderError::Config(format!(
                "unsupported replay version {} (expected {REPLAY_VERSION})",
                script.version
            )));
        }
        let n = script.records.len();
        Ok(ReplayProvider {
            records: script.records,
            consumed: Mutex::new(vec![false; n]),
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let script: ReplayScript = serde_json::from_str(text).map_err(|e| ProviderError::Config(e.to_string()))?;
        Self::new(script)
    }

    pub fn from_file(path: &Path) -> Result<Self, ProviderError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))
    }

    pub fn remaining(&self) -> usize {
        self.consumed.lock().unwrap().iter().filter(|c| !**c).count()
    }
}

#[async_trait]
impl Provider for ReplayProvider {
    fn tag(&self) -> String {
        "replay".into()
    }

    async fn generate(&self, request: &ProviderRequest) -> Result<ProviderResponse, ProviderError> {
        let idx = {
            let mut consumed = self.consumed.lock().unwrap();
            let idx = self
                .records
                .iter()
                .enumerate()
                .find(|(i, r)| !consumed[*i] && key_matches(&r.pattern, &request.key))
                .map(|(i, _)| i)
                .ok_or_else(|| ProviderError::ScriptExhausted {
                    key: request.key.clone(),
                })?;
            consumed[idx] = true;
            idx
        };
        Ok(ProviderResponse {
            text: fill_template(&self.records[idx].response, &request.bindings),
            latency_seconds: 0.0,
            provider_tag: self.tag(),
        })
    }
}
