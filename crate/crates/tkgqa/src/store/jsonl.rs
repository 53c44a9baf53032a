//! JSON-lines question file I/O. One object per line with fields
//! `tokens`, `entities`, `times`, `answers`, `qtype`, `atype`, `template`.

use super::{QuestionRecord, Result, StoreError};
use std::path::Path;

pub fn write_questions(path: &Path, questions: &[QuestionRecord]) -> Result<()> {
    let mut out = String::new();
    for q in questions {
        let line = serde_json::to_string(q).map_err(|e| StoreError::Parse {
            line: 0,
            msg: format!("serialize: {e}"),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let q: QuestionRecord = serde_json::from_str(line).map_err(|e| StoreError::Parse {
            line: i + 1,
            msg: format!("bad question record: {e}"),
        })?;
        if q.answers.is_empty() {
            return Err(StoreError::Validation {
                line: i + 1,
                msg: "question has empty answer set".into(),
            });
        }
        out.push(q);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Annotation, Answer, AnswerKind, AnswerType, QuestionType, TemplateId};

    #[test]
    fn round_trip_preserves_records_and_field_names() {
        let q = QuestionRecord {
            tokens: vec!["who".into(), "held".into(), "rel0".into(), "<ent>".into()],
            entities: vec![Annotation { pos: 3, id: 7 }],
            times: vec![],
            answers: vec![Answer {
                kind: AnswerKind::Entity,
                id: 2,
            }],
            qtype: QuestionType::Simple,
            atype: AnswerType::Entity,
            template: TemplateId::T1,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        write_questions(&path, &[q.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        for key in [
            "\"tokens\"",
            "\"entities\"",
            "\"times\"",
            "\"answers\"",
            "\"qtype\"",
            "\"atype\"",
            "\"template\"",
            "\"pos\"",
            "\"id\"",
            "\"kind\"",
            "\"entity\"",
            "\"simple\"",
            "\"T1\"",
        ] {
            assert!(text.contains(key), "missing {key} in {text}");
        }
        let back = read_questions(&path).unwrap();
        assert_eq!(back, vec![q]);
    }
}
