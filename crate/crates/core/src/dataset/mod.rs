//! Passage/Q&A datasets: ingestion, validation and seeded selection.
//!
//! Two on-disk formats are understood, picked by [`DatasetFormat`]:
//!
//! * `canonical`: UTF-8, one JSON record per line,
//!   `{"passage_id", "title", "body", "qa": [{"question", "answer", "kind"}]}`
//!   where `kind` is `explicit` or `implicit`.
//! * `fairytaleqa`: the per-question CSV export of FairytaleQA, grouped into
//!   one passage per story section (see [`fairytaleqa`]).
//!
//! Selection draws from a `ChaCha8Rng` seeded with `seed_from_u64(seed)`
//! and picks uniformly among the passages with at least `min_qa_pairs`
//! questions.

mod canonical;
pub mod fairytaleqa;
mod validate;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use canonical::{parse_canonical, write_canonical};
pub use validate::{validate_dataset, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QaKind {
    Explicit,
    Implicit,
}

impl QaKind {
    /// Lenient parse used by the loaders; `None` for unrecognised labels.
    pub fn from_label(label: &str) -> Option<Self> {
        match label.trim().to_ascii_lowercase().as_str() {
            "explicit" | "ex" => Some(QaKind::Explicit),
            "implicit" | "im" => Some(QaKind::Implicit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub kind: QaKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub passage_id: String,
    pub title: String,
    pub body: String,
    #[serde(rename = "qa")]
    pub qa_pairs: Vec<QaPair>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Dataset {
    pub name: String,
    pub passages: Vec<Passage>,
    /// Hex SHA-256 over the ingested bytes.
    pub source_digest: String,
    /// Non-fatal findings from ingestion, e.g. unknown question kinds.
    pub load_warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: IoErrorText },
    #[error("{file}:{line}: {record}: {message}")]
    Parse {
        file: String,
        line: usize,
        record: String,
        message: String,
    },
    #[error("dataset {0} contains no passages")]
    EmptyDataset(String),
    #[error("duplicate passage_id {passage_id:?} (line {line})")]
    DuplicatePassageId { passage_id: String, line: usize },
    #[error("no passage has at least {min_qa_pairs} QA pairs")]
    NoEligiblePassage { min_qa_pairs: usize },
    #[error("unknown dataset format {0:?} (expected canonical or fairytaleqa)")]
    UnknownFormat(String),
}

/// `std::io::Error` is neither `Clone` nor `Eq`; keep its rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoErrorText(pub String);

impl fmt::Display for IoErrorText {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for IoErrorText {}

fn io_error(path: &Path, err: std::io::Error) -> DatasetError {
    DatasetError::Io {
        path: path.to_path_buf(),
        source: IoErrorText(err.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetFormat {
    #[default]
    Canonical,
    #[serde(alias = "fairytale_qa")]
    FairytaleQa,
}

impl FromStr for DatasetFormat {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "canonical" => Ok(DatasetFormat::Canonical),
            "fairytaleqa" | "fairytale_qa" => Ok(DatasetFormat::FairytaleQa),
            other => Err(DatasetError::UnknownFormat(other.to_string())),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetFormat::Canonical => "canonical",
            DatasetFormat::FairytaleQa => "fairytaleqa",
        })
    }
}

pub(crate) fn digest_parts<'a>(parts: impl IntoIterator<Item = (&'a str, &'a [u8])>) -> String {
    let mut hasher = Sha256::new();
    for (name, bytes) in parts {
        hasher.update(name.as_bytes());
        hasher.update([0u8]);
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(bytes);
    }
    hex::encode(hasher.finalize())
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string())
}

/// Loads `path` with the adapter registered for `format`.
pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<Dataset, DatasetError> {
    match format {
        DatasetFormat::Canonical => {
            let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
            let file = path.display().to_string();
            let (passages, load_warnings) = parse_canonical(&file, &bytes)?;
            if passages.is_empty() {
                return Err(DatasetError::EmptyDataset(file));
            }
            Ok(Dataset {
                name: dataset_name(path),
                source_digest: digest_parts([("", bytes.as_slice())]),
                passages,
                load_warnings,
            })
        }
        DatasetFormat::FairytaleQa => fairytaleqa::load(path),
    }
}

impl Dataset {
    pub fn question_count(&self) -> usize {
        self.passages.iter().map(|p| p.qa_pairs.len()).sum()
    }

    pub fn passage(&self, passage_id: &str) -> Option<&Passage> {
        self.passages.iter().find(|p| p.passage_id == passage_id)
    }

    pub fn eligible(&self, min_qa_pairs: usize) -> impl Iterator<Item = &Passage> {
        self.passages.iter().filter(move |p| p.qa_pairs.len() >= min_qa_pairs)
    }
}

/// Uniform draw over the eligible passages, reproducible for a given seed.
pub fn select_passage(dataset: &Dataset, min_qa_pairs: usize, seed: u64) -> Result<&Passage, DatasetError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    select_passage_with(dataset, min_qa_pairs, &mut rng)
}

pub fn select_passage_with<'d, R: Rng + ?Sized>(
    dataset: &'d Dataset,
    min_qa_pairs: usize,
    rng: &mut R,
) -> Result<&'d Passage, DatasetError> {
    let eligible: Vec<&Passage> = dataset.eligible(min_qa_pairs).collect();
    if eligible.is_empty() {
        return Err(DatasetError::NoEligiblePassage { min_qa_pairs });
    }
    Ok(eligible[rng.random_range(0..eligible.len())])
}
