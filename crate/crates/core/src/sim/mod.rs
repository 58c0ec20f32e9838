//! Persona simulation: scripted or model-backed students connect to a live
//! gateway over the public protocol, take turns as the moderator directs,
//! and the run is summarised as a [`SimReport`].

mod config;
mod persona;
mod report;
mod runner;
mod stats;

use std::time::Duration;

use thiserror::Error;

use crate::provider::ProviderError;

pub use config::{DatasetSource, SimConfig};
pub use persona::{
    read_script, Archetype, Move, PersonaAgent, PersonaSpec, ResponseSource, HINT, PASSIVE_DEFAULT, SILENT,
};
pub use report::{write_report, SimReport, REPORT_FILE, SUMMARY_FILE, TRANSCRIPT_FILE};
pub use runner::run_simulation;
pub use stats::{compute_latency_stats, stats_of, LatencyRecord, LatencyStats, StatsError, STD_FORMULA};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation config: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("persona {0} is a model-backed toxic persona; pass --allow-unsafe-persona to run it")]
    UnsafePersona(String),
    #[error("script for persona {persona} ran out of lines")]
    ScriptExhausted { persona: String },
    #[error("provider for {who} failed: {source}")]
    Provider { who: String, source: ProviderError },
    #[error("server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("session stalled: no progress for {waited:?} while waiting for {waiting_for}")]
    SessionStalled { waited: Duration, waiting_for: String },
    #[error("server refused {persona}: {code}: {detail}")]
    Refused {
        persona: String,
        code: String,
        detail: String,
    },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Stats(#[from] StatsError),
}
