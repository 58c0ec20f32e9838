use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Dataset, QaKind};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub dataset: String,
    pub source_digest: String,
    pub passages: usize,
    pub questions: usize,
    /// Distinct passage titles; for story-derived corpora, the story count.
    pub distinct_titles: usize,
    pub kinds: BTreeMap<QaKind, usize>,
    /// QA-pair count -> number of passages with that many pairs.
    pub qa_histogram: BTreeMap<usize, usize>,
    pub warnings: Vec<String>,
}

pub fn validate_dataset(dataset: &Dataset) -> ValidationReport {
    let mut kinds = BTreeMap::from([(QaKind::Explicit, 0), (QaKind::Implicit, 0)]);
    let mut qa_histogram = BTreeMap::new();
    let mut titles = BTreeSet::new();
    let mut warnings = dataset.load_warnings.clone();

    for p in &dataset.passages {
        titles.insert(p.title.as_str());
        *qa_histogram.entry(p.qa_pairs.len()).or_insert(0) += 1;
        for qa in &p.qa_pairs {
            *kinds.entry(qa.kind).or_insert(0) += 1;
        }
        if p.body.trim().is_empty() {
            warnings.push(format!("{}: empty body", p.passage_id));
        }
        if p.qa_pairs.is_empty() {
            warnings.push(format!("{}: no QA pairs, never selectable", p.passage_id));
        }
    }

    ValidationReport {
        dataset: dataset.name.clone(),
        source_digest: dataset.source_digest.clone(),
        passages: dataset.passages.len(),
        questions: dataset.question_count(),
        distinct_titles: titles.len(),
        kinds,
        qa_histogram,
        warnings,
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dataset:         {}", self.dataset)?;
        writeln!(f, "digest:          {}", self.source_digest)?;
        writeln!(f, "passages:        {}", self.passages)?;
        writeln!(f, "distinct titles: {}", self.distinct_titles)?;
        writeln!(f, "questions:       {}", self.questions)?;
        writeln!(
            f,
            "  explicit:      {}",
            self.kinds.get(&QaKind::Explicit).unwrap_or(&0)
        )?;
        writeln!(
            f,
            "  implicit:      {}",
            self.kinds.get(&QaKind::Implicit).unwrap_or(&0)
        )?;
        writeln!(f, "qa pairs per passage:")?;
        for (pairs, count) in &self.qa_histogram {
            writeln!(f, "  {pairs:>4}: {count}")?;
        }
        if self.warnings.is_empty() {
            write!(f, "warnings:        none")
        } else {
            writeln!(f, "warnings:        {}", self.warnings.len())?;
            for (i, w) in self.warnings.iter().enumerate() {
                if i + 1 == self.warnings.len() {
                    write!(f, "  - {w}")?;
                } else {
                    writeln!(f, "  - {w}")?;
                }
            }
            Ok(())
        }
    }
}
