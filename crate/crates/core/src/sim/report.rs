use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::stats::{compute_latency_stats, LatencyRecord, LatencyStats, StatsError, STD_FORMULA};
use super::SimError;
use crate::moderator::{FeedbackReport, HistoryEntry, Role, Transcript};

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.md";
pub const TRANSCRIPT_FILE: &str = "transcript.tsv";

/// Outcome of one simulated session, as seen on the room stream.
#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub room_id: String,
    pub passage_title: String,
    pub roster: Vec<String>,
    /// Rebuilt from the broadcast stream: `joined` markers, student
    /// messages, and each moderator message preceded by its action marker.
    pub transcript: Transcript,
    /// One record per provider-backed moderator message or feedback entry,
    /// in stream order.
    pub latency: Vec<LatencyRecord>,
    pub mean_latency: f64,
    pub std_latency: f64,
    pub feedback: FeedbackReport,
    /// Student messages per roster name.
    pub participation: BTreeMap<String, usize>,
    pub reached_feedback: bool,
}

impl SimReport {
    pub(crate) fn assemble(
        room_id: String,
        passage_title: String,
        roster: Vec<String>,
        transcript: Transcript,
        latency: Vec<LatencyRecord>,
        feedback: FeedbackReport,
        reached_feedback: bool,
    ) -> Result<Self, StatsError> {
        let LatencyStats { mean, std, .. } = compute_latency_stats(&latency)?;
        let participation = recount_participation(&roster, transcript.entries());
        Ok(SimReport {
            room_id,
            passage_title,
            roster,
            transcript,
            latency,
            mean_latency: mean,
            std_latency: std,
            feedback,
            participation,
            reached_feedback,
        })
    }

    /// Records for moderator messages only, leaving out feedback calls.
    pub fn moderator_latency(&self) -> impl Iterator<Item = &LatencyRecord> {
        self.latency.iter().filter(|r| r.action_kind != "feedback")
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct View<'a> {
            room_id: &'a str,
            passage_title: &'a str,
            roster: &'a [String],
            reached_feedback: bool,
            latency: &'a [LatencyRecord],
            mean_latency: f64,
            std_latency: f64,
            std_formula: &'static str,
            participation: &'a BTreeMap<String, usize>,
            feedback: &'a FeedbackReport,
            transcript: &'a [HistoryEntry],
        }
        serde_json::to_string_pretty(&View {
            room_id: &self.room_id,
            passage_title: &self.passage_title,
            roster: &self.roster,
            reached_feedback: self.reached_feedback,
            latency: &self.latency,
            mean_latency: self.mean_latency,
            std_latency: self.std_latency,
            std_formula: STD_FORMULA,
            participation: &self.participation,
            feedback: &self.feedback,
            transcript: self.transcript.entries(),
        })
        .expect("report serializes")
    }

    pub fn summary_markdown(&self) -> String {
        let mut md = String::new();
        let _ = writeln!(md, "# Simulation report\n");
        let _ = writeln!(md, "- Room: `{}`", self.room_id);
        let _ = writeln!(md, "- Passage: {}", self.passage_title);
        let _ = writeln!(md, "- Roster: {}", self.roster.join(", "));
        let _ = writeln!(
            md,
            "- Reached feedback: {}\n",
            if self.reached_feedback { "yes" } else { "no" }
        );
        let _ = writeln!(md, "## Latency\n");
        let _ = writeln!(md, "| # | action | seconds |");
        let _ = writeln!(md, "|---|---|---|");
        for r in &self.latency {
            let _ = writeln!(md, "| {} | {} | {:.3} |", r.interaction_index, r.action_kind, r.seconds);
        }
        let _ = writeln!(
            md,
            "\nMean {:.3} s, σ {:.3} s over {} interactions ({STD_FORMULA}).\n",
            self.mean_latency,
            self.std_latency,
            self.latency.len()
        );
        let _ = writeln!(md, "## Participation\n");
        let _ = writeln!(md, "| student | messages | prompted | mean tokens |");
        let _ = writeln!(md, "|---|---|---|---|");
        for name in &self.roster {
            let (prompted, mean_tokens) = self
                .feedback
                .per_student
                .get(name)
                .map_or((0, 0.0), |e| (e.stats.prompted_count, e.stats.mean_message_tokens));
            let _ = writeln!(
                md,
                "| {name} | {} | {prompted} | {mean_tokens:.2} |",
                self.participation.get(name).copied().unwrap_or(0)
            );
        }
        let _ = writeln!(md, "\n## Feedback\n");
        for (name, entry) in &self.feedback.per_student {
            let _ = writeln!(md, "### {name}\n");
            match &entry.error {
                Some(err) => {
                    let _ = writeln!(md, "_feedback failed: {err}_\n");
                }
                None => {
                    let _ = writeln!(md, "{}\n", entry.feedback_text);
                }
            }
        }
        md
    }
}

pub(crate) fn recount_participation(roster: &[String], entries: &[HistoryEntry]) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = roster.iter().map(|n| (n.clone(), 0)).collect();
    for e in entries.iter().filter(|e| e.role == Role::Student) {
        *counts.entry(e.author_name.clone()).or_default() += 1;
    }
    counts
}

/// Writes `report.json`, `summary.md` and `transcript.tsv` into `dir`.
pub fn write_report(report: &SimReport, dir: &Path) -> Result<(), SimError> {
    let io = |e: std::io::Error| SimError::Io(format!("{}: {e}", dir.display()));
    std::fs::create_dir_all(dir).map_err(io)?;
    std::fs::write(dir.join(REPORT_FILE), report.to_json()).map_err(io)?;
    std::fs::write(dir.join(SUMMARY_FILE), report.summary_markdown()).map_err(io)?;
    std::fs::write(dir.join(TRANSCRIPT_FILE), report.transcript.to_tsv()).map_err(io)?;
    Ok(())
}
