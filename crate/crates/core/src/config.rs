//! Server configuration, layered: command-line flag, then `DISCOURSE_*`
//! environment variable, then config file, then built-in default.
//!
//! Config file keys (TOML):
//!
//! ```toml
//! max_students = 4
//! max_tokens = 5000
//! min_qa_pairs = 1
//! max_questions = 3
//! dataset_path = "passages.json"
//! dataset_format = "canonical"      # or "fairytaleqa"
//! listen = "127.0.0.1"
//! port = 8080
//! seed = 7
//! turn_timeout_secs = 20.0
//! heartbeat_secs = 15.0
//!
//! [provider]
//! kind = "scripted"                 # or "replay" / "remote"
//! ```
//!
//! Relative paths in a config file resolve against the file's directory.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetFormat;
use crate::provider::{ProviderConfig, SharedProvider};

pub const ENV_PREFIX: &str = "DISCOURSE_";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServerConfig {
    pub max_students: usize,
    pub max_tokens: usize,
    pub min_qa_pairs: usize,
    pub max_questions: usize,
    pub dataset_path: PathBuf,
    pub dataset_format: DatasetFormat,
    pub provider: ProviderConfig,
    pub listen: String,
    pub port: u16,
    pub seed: Option<u64>,
    /// How long the floor must stay quiet before the moderator steps in.
    pub turn_timeout_secs: f64,
    pub heartbeat_secs: f64,
}

/// One configuration layer; unset fields fall through to the next layer.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialServerConfig {
    pub max_students: Option<usize>,
    pub max_tokens: Option<usize>,
    pub min_qa_pairs: Option<usize>,
    pub max_questions: Option<usize>,
    pub dataset_path: Option<PathBuf>,
    pub dataset_format: Option<DatasetFormat>,
    pub provider: Option<ProviderConfig>,
    pub listen: Option<String>,
    pub port: Option<u16>,
    pub seed: Option<u64>,
    pub turn_timeout_secs: Option<f64>,
    pub heartbeat_secs: Option<f64>,
}

fn parse_env<T: std::str::FromStr>(key: &str, raw: Option<String>) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    match raw {
        None => Ok(None),
        Some(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|e| ConfigError::new(key.to_lowercase(), format!("{ENV_PREFIX}{key}={v:?}: {e}"))),
    }
}

impl PartialServerConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let field = msg
                .split('`')
                .nth(1)
                .filter(|_| msg.contains("unknown field"))
                .unwrap_or("file")
                .to_string();
            ConfigError::new(field, e.to_string())
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
        let mut layer = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(p) = &layer.dataset_path {
            if p.is_relative() {
                layer.dataset_path = Some(base.join(p));
            }
        }
        layer.provider = layer.provider.map(|p| p.rebase(base));
        Ok(layer)
    }

    /// Reads `DISCOURSE_<FIELD>` variables through `lookup`.
    pub fn from_env<F>(lookup: F) -> Result<Self, ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        let get = |k: &str| lookup(&format!("{ENV_PREFIX}{k}"));
        Ok(PartialServerConfig {
            max_students: parse_env("MAX_STUDENTS", get("MAX_STUDENTS"))?,
            max_tokens: parse_env("MAX_TOKENS", get("MAX_TOKENS"))?,
            min_qa_pairs: parse_env("MIN_QA_PAIRS", get("MIN_QA_PAIRS"))?,
            max_questions: parse_env("MAX_QUESTIONS", get("MAX_QUESTIONS"))?,
            dataset_path: get("DATASET_PATH").map(PathBuf::from),
            dataset_format: parse_env("DATASET_FORMAT", get("DATASET_FORMAT"))?,
            provider: None,
            listen: get("LISTEN"),
            port: parse_env("PORT", get("PORT"))?,
            seed: parse_env("SEED", get("SEED"))?,
            turn_timeout_secs: parse_env("TURN_TIMEOUT_SECS", get("TURN_TIMEOUT_SECS"))?,
            heartbeat_secs: parse_env("HEARTBEAT_SECS", get("HEARTBEAT_SECS"))?,
        })
    }

    /// Fields set here win over `lower`.
    pub fn over(self, lower: PartialServerConfig) -> PartialServerConfig {
        PartialServerConfig {
            max_students: self.max_students.or(lower.max_students),
            max_tokens: self.max_tokens.or(lower.max_tokens),
            min_qa_pairs: self.min_qa_pairs.or(lower.min_qa_pairs),
            max_questions: self.max_questions.or(lower.max_questions),
            dataset_path: self.dataset_path.or(lower.dataset_path),
            dataset_format: self.dataset_format.or(lower.dataset_format),
            provider: self.provider.or(lower.provider),
            listen: self.listen.or(lower.listen),
            port: self.port.or(lower.port),
            seed: self.seed.or(lower.seed),
            turn_timeout_secs: self.turn_timeout_secs.or(lower.turn_timeout_secs),
            heartbeat_secs: self.heartbeat_secs.or(lower.heartbeat_secs),
        }
    }

    /// Fills remaining gaps with defaults and validates.
    pub fn resolve(self) -> Result<ServerConfig, ConfigError> {
        let cfg = ServerConfig {
            max_students: self.max_students.unwrap_or(4),
            max_tokens: self.max_tokens.unwrap_or(5000),
            min_qa_pairs: self.min_qa_pairs.unwrap_or(1),
            max_questions: self.max_questions.unwrap_or(3),
            dataset_path: self
                .dataset_path
                .ok_or_else(|| ConfigError::new("dataset_path", "required"))?,
            dataset_format: self.dataset_format.unwrap_or(DatasetFormat::Canonical),
            provider: self.provider.unwrap_or_default(),
            listen: self.listen.unwrap_or_else(|| "127.0.0.1".into()),
            port: self.port.unwrap_or(8080),
            seed: self.seed,
            turn_timeout_secs: self.turn_timeout_secs.unwrap_or(20.0),
            heartbeat_secs: self.heartbeat_secs.unwrap_or(15.0),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl ServerConfig {
    /// Merges the layers in precedence order: flags, env, file, defaults.
    pub fn layered(
        flags: PartialServerConfig,
        env: PartialServerConfig,
        file: Option<PartialServerConfig>,
    ) -> Result<Self, ConfigError> {
        flags.over(env).over(file.unwrap_or_default()).resolve()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (field, value) in [
            ("max_students", self.max_students),
            ("max_tokens", self.max_tokens),
            ("min_qa_pairs", self.min_qa_pairs),
            ("max_questions", self.max_questions),
        ] {
            if value < 1 {
                return Err(ConfigError::new(field, "must be at least 1"));
            }
        }
        for (field, value) in [
            ("turn_timeout_secs", self.turn_timeout_secs),
            ("heartbeat_secs", self.heartbeat_secs),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ConfigError::new(field, "must be a positive number of seconds"));
            }
        }
        if self.listen.trim().is_empty() {
            return Err(ConfigError::new("listen", "must not be empty"));
        }
        Ok(())
    }

    pub fn turn_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.turn_timeout_secs)
    }

    pub fn heartbeat(&self) -> Duration {
        Duration::from_secs_f64(self.heartbeat_secs)
    }

    /// Builds the moderator backend; a missing credential is reported
    /// against the `provider` field.
    pub fn build_provider_with_env<F>(&self, lookup: F) -> Result<SharedProvider, ConfigError>
    where
        F: Fn(&str) -> Option<String>,
    {
        self.provider
            .build_with_env(lookup)
            .map_err(|e| ConfigError::new("provider", e.to_string()))
    }
}
