use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::persona::{PersonaSpec, ResponseSource};
use super::SimError;
use crate::dataset::DatasetFormat;
use crate::provider::ProviderConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    pub path: PathBuf,
    #[serde(default)]
    pub format: DatasetFormat,
}

/// A simulation run as described by its TOML file.
///
/// ```toml
/// capacity = 4
/// seed = 7
/// [dataset]
/// path = "passages.jsonl"
/// [moderator]
/// kind = "scripted"
/// [[persona]]
/// name = "Ethan"
/// archetype = "passive"
/// source = { scripted = "scripts/ethan.txt" }
/// ```
///
/// Relative paths resolve against the directory of the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_capacity")]
    pub capacity: usize,
    #[serde(default = "default_min_qa_pairs")]
    pub min_qa_pairs: usize,
    #[serde(default = "default_max_questions")]
    pub max_questions: usize,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    #[serde(default)]
    pub seed: u64,
    /// Quiet period before the moderator prompts a silent student.
    #[serde(default = "default_turn_timeout_ms")]
    pub turn_timeout_ms: u64,
    /// Give up when the room stream shows no progress for this long.
    #[serde(default = "default_watchdog_secs")]
    pub watchdog_secs: f64,
    #[serde(default)]
    pub allow_unsafe_persona: bool,
    /// Per-call delays (seconds) added to the moderator backend.
    #[serde(default)]
    pub inject_delays: Option<Vec<f64>>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Existing server to connect to; when absent an embedded one is started.
    #[serde(default)]
    pub server: Option<String>,
    pub dataset: DatasetSource,
    #[serde(default)]
    pub moderator: ProviderConfig,
    #[serde(default)]
    pub backends: BTreeMap<String, ProviderConfig>,
    #[serde(rename = "persona")]
    pub personas: Vec<PersonaSpec>,
    /// Directory that relative persona script paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_capacity() -> usize {
    4
}
fn default_min_qa_pairs() -> usize {
    1
}
fn default_max_questions() -> usize {
    3
}
fn default_max_tokens() -> usize {
    5000
}
fn default_turn_timeout_ms() -> u64 {
    400
}
fn default_watchdog_secs() -> f64 {
    60.0
}

impl SimConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, SimError> {
        let mut config: SimConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.base_dir = base_dir.to_path_buf();
        if config.dataset.path.is_relative() {
            config.dataset.path = base_dir.join(&config.dataset.path);
        }
        config.moderator = config.moderator.rebase(base_dir);
        config.backends = std::mem::take(&mut config.backends)
            .into_iter()
            .map(|(k, v)| (k, v.rebase(base_dir)))
            .collect();
        if let Some(out) = config.output.as_mut() {
            if out.is_relative() {
                *out = base_dir.join(&*out);
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base).map_err(|e| match e {
            SimError::Config(m) => SimError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), SimError> {
        for (field, value) in [
            ("capacity", self.capacity),
            ("min_qa_pairs", self.min_qa_pairs),
            ("max_questions", self.max_questions),
            ("max_tokens", self.max_tokens),
        ] {
            if value == 0 {
                return Err(SimError::Config(format!("`{field}` must be at least 1")));
            }
        }
        if self.personas.is_empty() {
            return Err(SimError::Config("at least one [[persona]] is required".into()));
        }
        if self.personas.len() > self.capacity {
            return Err(SimError::Config(format!(
                "{} personas configured for a room of {}",
                self.personas.len(),
                self.capacity
            )));
        }
        if !(self.watchdog_secs.is_finite() && self.watchdog_secs > 0.0) {
            return Err(SimError::Config("`watchdog_secs` must be positive".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.personas {
            if !seen.insert(p.name.trim().to_string()) {
                return Err(SimError::Config(format!("duplicate persona name {:?}", p.name)));
            }
            p.validate(self.allow_unsafe_persona)?;
            if let Some(ResponseSource::Backend(b)) = &p.source {
                if !self.backends.contains_key(b) {
                    return Err(SimError::Config(format!("persona {}: no backend named {b:?}", p.name)));
                }
            }
        }
        Ok(())
    }

    pub fn turn_timeout(&self) -> Duration {
        Duration::from_millis(self.turn_timeout_ms)
    }

    pub fn watchdog(&self) -> Duration {
        Duration::from_secs_f64(self.watchdog_secs)
    }
}
