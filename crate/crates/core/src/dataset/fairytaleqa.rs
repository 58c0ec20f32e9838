//! Adapter for the FairytaleQA per-question CSV export.
//!
//! Each CSV row is one question. Column mapping (first present alias wins):
//!
//! | passage field   | CSV column(s)                      |
//! |-----------------|------------------------------------|
//! | title           | `story_name`                       |
//! | body            | `story_section`, `content`         |
//! | qa.question     | `question`                         |
//! | qa.answer       | `answer1`, `answer`                |
//! | qa.kind         | `ex-or-im`, `ex_or_im`             |
//!
//! Rows sharing a story name and section text become one passage with id
//! `<story_name>#<n>`, `n` counting that story's sections in order of first
//! appearance. The path may be a single CSV or a directory, in which case
//! every `*.csv` inside it (the train/validation/test splits) is read in
//! file-name order.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use super::{digest_parts, io_error, Dataset, DatasetError, Passage, QaKind, QaPair};

struct Columns {
    story: usize,
    section: usize,
    question: usize,
    answer: usize,
    kind: usize,
}

fn find(headers: &csv::StringRecord, aliases: &[&str]) -> Option<usize> {
    aliases
        .iter()
        .find_map(|alias| headers.iter().position(|h| h.trim().eq_ignore_ascii_case(alias)))
}

fn columns(file: &str, headers: &csv::StringRecord) -> Result<Columns, DatasetError> {
    let need = |aliases: &[&str]| {
        find(headers, aliases).ok_or_else(|| DatasetError::Parse {
            file: file.to_string(),
            line: 1,
            record: "header".to_string(),
            message: format!("missing column {}", aliases.join(" / ")),
        })
    };
    Ok(Columns {
        story: need(&["story_name"])?,
        section: need(&["story_section", "content"])?,
        question: need(&["question"])?,
        answer: need(&["answer1", "answer"])?,
        kind: need(&["ex-or-im", "ex_or_im"])?,
    })
}

fn csv_files(path: &Path) -> Result<Vec<PathBuf>, DatasetError> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| io_error(path, e))?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|ext| ext.eq_ignore_ascii_case("csv")))
            .collect();
        files.sort();
        Ok(files)
    } else {
        Ok(vec![path.to_path_buf()])
    }
}

#[derive(Default)]
struct Grouper {
    passages: Vec<Passage>,
    by_key: HashMap<(String, String), usize>,
    sections_per_story: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl Grouper {
    fn push(&mut self, story: &str, section: &str, qa: QaPair) {
        let key = (story.to_string(), section.to_string());
        let idx = match self.by_key.get(&key) {
            Some(idx) => *idx,
            None => {
                let n = self.sections_per_story.entry(story.to_string()).or_insert(0);
                *n += 1;
                self.passages.push(Passage {
                    passage_id: format!("{story}#{n}"),
                    title: story.to_string(),
                    body: section.to_string(),
                    qa_pairs: Vec::new(),
                });
                self.by_key.insert(key, self.passages.len() - 1);
                self.passages.len() - 1
            }
        };
        self.passages[idx].qa_pairs.push(qa);
    }
}

/// Parses one CSV export held in memory.
pub fn parse_csv(file: &str, bytes: &[u8]) -> Result<(Vec<Passage>, Vec<String>), DatasetError> {
    let mut grouper = Grouper::default();
    parse_into(file, bytes, &mut grouper)?;
    Ok((grouper.passages, grouper.warnings))
}

fn parse_into(file: &str, bytes: &[u8], grouper: &mut Grouper) -> Result<(), DatasetError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes);
    let headers = reader
        .headers()
        .map_err(|e| DatasetError::Parse {
            file: file.to_string(),
            line: 1,
            record: "header".to_string(),
            message: e.to_string(),
        })?
        .clone();
    let cols = columns(file, &headers)?;

    for (row, result) in reader.records().enumerate() {
        let record = result.map_err(|e| DatasetError::Parse {
            file: file.to_string(),
            line: e.position().map(|p| p.line() as usize).unwrap_or(row + 2),
            record: format!("row {}", row + 1),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(row + 2);
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let story = field(cols.story);
        let fail = |message: &str| DatasetError::Parse {
            file: file.to_string(),
            line,
            record: format!("row {} ({story})", row + 1),
            message: message.to_string(),
        };
        if story.is_empty() {
            return Err(fail("empty story_name"));
        }
        let question = field(cols.question);
        if question.is_empty() {
            return Err(fail("empty question"));
        }
        let answer = field(cols.answer);
        if answer.is_empty() {
            return Err(fail("empty answer"));
        }
        let label = field(cols.kind);
        let kind = QaKind::from_label(label).unwrap_or_else(|| {
            grouper.warnings.push(format!(
                "{file}:{line}: unknown ex-or-im value {label:?}, treated as explicit"
            ));
            QaKind::Explicit
        });
        grouper.push(
            story,
            field(cols.section),
            QaPair {
                question: question.to_string(),
                answer: answer.to_string(),
                kind,
            },
        );
    }
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    let files = csv_files(path)?;
    let mut contents = Vec::with_capacity(files.len());
    for f in &files {
        let bytes = std::fs::read(f).map_err(|e| io_error(f, e))?;
        contents.push((f.display().to_string(), bytes));
    }

    let mut grouper = Grouper::default();
    for (name, bytes) in &contents {
        parse_into(name, bytes, &mut grouper)?;
    }
    if grouper.passages.is_empty() {
        return Err(DatasetError::EmptyDataset(path.display().to_string()));
    }

    let digest = digest_parts(contents.iter().map(|(name, bytes)| {
        let base = Path::new(name)
            .file_name()
            .map(|s| s.to_str().unwrap_or_default())
            .unwrap_or_default();
        (base, bytes.as_slice())
    }));
    Ok(Dataset {
        name: path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "fairytaleqa".into()),
        passages: grouper.passages,
        source_digest: digest,
        load_warnings: grouper.warnings,
    })
}
