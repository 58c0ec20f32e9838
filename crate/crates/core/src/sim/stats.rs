use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stamped into every report next to the numbers it describes.
pub const STD_FORMULA: &str = "population standard deviation (divisor n)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub interaction_index: usize,
    pub seconds: f64,
    /// `ModeratorAction` kind (`ask_question`, ...) or `feedback`.
    pub action_kind: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no latency records")]
    EmptyRecords,
}

/// Arithmetic mean and population standard deviation of `seconds`.
pub fn compute_latency_stats(records: &[LatencyRecord]) -> Result<LatencyStats, StatsError> {
    let values: Vec<f64> = records.iter().map(|r| r.seconds).collect();
    stats_of(&values)
}

pub fn stats_of(values: &[f64]) -> Result<LatencyStats, StatsError> {
    if values.is_empty() {
        return Err(StatsError::EmptyRecords);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    Ok(LatencyStats {
        n: values.len(),
        mean,
        std: var.sqrt(),
    })
}
