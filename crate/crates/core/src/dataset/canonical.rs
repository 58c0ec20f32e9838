use std::collections::HashSet;
use std::io::Write;

use serde::Deserialize;
use serde_json::Value;

use super::{DatasetError, Passage, QaKind, QaPair};

#[derive(Deserialize)]
struct RawQa {
    question: String,
    answer: String,
    #[serde(default)]
    kind: Option<String>,
}

#[derive(Deserialize)]
struct RawRecord {
    passage_id: String,
    #[serde(default)]
    title: String,
    body: String,
    qa: Vec<RawQa>,
}

/// Parses canonical line-delimited records. Blank lines are skipped; every
/// other line must be one well-formed record.
pub fn parse_canonical(file: &str, bytes: &[u8]) -> Result<(Vec<Passage>, Vec<String>), DatasetError> {
    let mut passages = Vec::new();
    let mut warnings = Vec::new();
    let mut seen = HashSet::new();

    for (idx, raw_line) in bytes.split(|b| *b == b'\n').enumerate() {
        let line = idx + 1;
        let parse_err = |record: String, message: String| DatasetError::Parse {
            file: file.to_string(),
            line,
            record,
            message,
        };
        let text = std::str::from_utf8(raw_line)
            .map_err(|e| parse_err(format!("record at line {line}"), format!("invalid UTF-8: {e}")))?;
        let text = text.trim_end_matches('\r');
        if text.trim().is_empty() {
            continue;
        }

        let value: Value =
            serde_json::from_str(text).map_err(|e| parse_err(format!("record at line {line}"), e.to_string()))?;
        let locus = match value.get("passage_id").and_then(Value::as_str) {
            Some(id) => format!("passage_id {id:?}"),
            None => format!("record at line {line}"),
        };
        let record: RawRecord = serde_json::from_value(value).map_err(|e| parse_err(locus.clone(), e.to_string()))?;

        if !seen.insert(record.passage_id.clone()) {
            return Err(DatasetError::DuplicatePassageId {
                passage_id: record.passage_id,
                line,
            });
        }

        let mut qa_pairs = Vec::with_capacity(record.qa.len());
        for (qi, qa) in record.qa.into_iter().enumerate() {
            if qa.question.trim().is_empty() {
                return Err(parse_err(locus, format!("qa[{qi}]: empty question")));
            }
            if qa.answer.trim().is_empty() {
                return Err(parse_err(locus, format!("qa[{qi}]: empty answer")));
            }
            let kind = match qa.kind.as_deref().map(QaKind::from_label) {
                Some(Some(kind)) => kind,
                other => {
                    let label = match other {
                        Some(None) => qa.kind.clone().unwrap_or_default(),
                        _ => "<missing>".to_string(),
                    };
                    warnings.push(format!(
                        "{}: qa[{qi}]: unknown kind {label:?}, treated as explicit",
                        record.passage_id
                    ));
                    QaKind::Explicit
                }
            };
            qa_pairs.push(QaPair {
                question: qa.question,
                answer: qa.answer,
                kind,
            });
        }

        passages.push(Passage {
            passage_id: record.passage_id,
            title: record.title,
            body: record.body,
            qa_pairs,
        });
    }
    Ok((passages, warnings))
}

/// Writes passages in the canonical format, one record per line.
pub fn write_canonical<W: Write>(mut out: W, passages: &[Passage]) -> std::io::Result<()> {
    for p in passages {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = r#"{"passage_id":"a","title":"A","body":"Once.","qa":[{"question":"Who?","answer":"Cat","kind":"explicit"}]}
{"passage_id":"b","title":"B","body":"Twice.","qa":[{"question":"Why?","answer":"Hunger","kind":"implicit"},{"question":"Where?","answer":"Hill","kind":"explicit"}]}

{"passage_id":"c","title":"C","body":"Thrice.","qa":[]}
"#;

    #[test]
    fn parses_three_passages() {
        let (passages, warnings) = parse_canonical("f", FIXTURE.as_bytes()).unwrap();
        assert_eq!(passages.len(), 3);
        assert!(warnings.is_empty());
        assert_eq!(passages[1].qa_pairs[0].kind, QaKind::Implicit);
    }

    #[test]
    fn missing_answer_names_the_record() {
        let bad = r#"{"passage_id":"a","title":"A","body":"x","qa":[]}
{"passage_id":"zeta","title":"Z","body":"x","qa":[{"question":"Who?","kind":"explicit"}]}"#;
        match parse_canonical("f", bad.as_bytes()).unwrap_err() {
            DatasetError::Parse {
                line, record, message, ..
            } => {
                assert_eq!(line, 2);
                assert!(record.contains("zeta"), "{record}");
                assert!(message.contains("answer"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_json_reports_line() {
        let bad = "{\"passage_id\":\"a\",\"title\":\"A\",\"body\":\"x\",\"qa\":[]}\n{not json";
        assert!(matches!(
            parse_canonical("f", bad.as_bytes()).unwrap_err(),
            DatasetError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn invalid_utf8_reports_line() {
        let mut bytes = b"{\"passage_id\":\"a\",\"title\":\"A\",\"body\":\"x\",\"qa\":[]}\n".to_vec();
        bytes.extend_from_slice(&[0xff, 0xfe, b'\n']);
        assert!(matches!(
            parse_canonical("f", &bytes).unwrap_err(),
            DatasetError::Parse { line: 2, .. }
        ));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let dup = r#"{"passage_id":"a","title":"A","body":"x","qa":[]}
{"passage_id":"a","title":"A","body":"y","qa":[]}"#;
        assert_eq!(
            parse_canonical("f", dup.as_bytes()).unwrap_err(),
            DatasetError::DuplicatePassageId {
                passage_id: "a".into(),
                line: 2
            }
        );
    }

    #[test]
    fn unknown_kind_degrades_with_warning() {
        let rec = r#"{"passage_id":"a","title":"A","body":"x","qa":[{"question":"Q","answer":"A","kind":"summary"}]}"#;
        let (passages, warnings) = parse_canonical("f", rec.as_bytes()).unwrap();
        assert_eq!(passages[0].qa_pairs[0].kind, QaKind::Explicit);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("summary"));
    }

    #[test]
    fn empty_question_rejected() {
        let rec =
            r#"{"passage_id":"a","title":"A","body":"x","qa":[{"question":"  ","answer":"A","kind":"explicit"}]}"#;
        assert!(matches!(
            parse_canonical("f", rec.as_bytes()).unwrap_err(),
            DatasetError::Parse { .. }
        ));
    }

    #[test]
    fn write_then_parse_is_identity() {
        let (passages, _) = parse_canonical("f", FIXTURE.as_bytes()).unwrap();
        let mut buf = Vec::new();
        write_canonical(&mut buf, &passages).unwrap();
        let (again, _) = parse_canonical("f", &buf).unwrap();
        assert_eq!(passages, again);
    }
}
