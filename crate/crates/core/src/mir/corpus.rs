use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{parse_program, ParseError, Program};

/// One JSON-Lines corpus record. Unknown fields are ignored.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
}

/// A parsed record: the program carries the record id as its name and the
/// optional labels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabeledProgram {
    pub id: String,
    pub program: Program,
    pub label: Option<String>,
    pub group: Option<String>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("record {record} (`{id}`): {source}")]
    Parse {
        record: usize,
        id: String,
        #[source]
        source: ParseError,
    },
}

/// Parses JSON-Lines text. Records are numbered from 1, skipping blank lines;
/// line numbers count every line.
pub fn parse_corpus(text: &str) -> Result<Vec<LabeledProgram>, CorpusError> {
    let mut out = Vec::new();
    for (li, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: li + 1,
            msg: e.to_string(),
        })?;
        out.push(parse_record(rec, out.len() + 1)?);
    }
    Ok(out)
}

fn parse_record(rec: CorpusRecord, record: usize) -> Result<LabeledProgram, CorpusError> {
    let mut program = parse_program(&rec.code).map_err(|source| CorpusError::Parse {
        record,
        id: rec.id.clone(),
        source,
    })?;
    program.name = rec.id.clone();
    program.class_label = rec.label.clone();
    program.clone_group = rec.group.clone();
    Ok(LabeledProgram {
        id: rec.id,
        program,
        label: rec.label,
        group: rec.group,
    })
}

/// Parses in-memory records, numbered from 1.
pub fn parse_records(records: &[CorpusRecord]) -> Result<Vec<LabeledProgram>, CorpusError> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| parse_record(r.clone(), i + 1))
        .collect()
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledProgram>, CorpusError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_corpus(&text)
}

pub fn write_corpus(path: impl AsRef<Path>, records: &[CorpusRecord]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = fs::File::create(path).map_err(io)?;
    for r in records {
        let line = serde_json::to_string(r).expect("records serialize");
        writeln!(f, "{line}").map_err(io)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_records() {
        let text = r#"{"id":"a","code":"method f(x){ return x; }","label":"id"}
{"id":"b","code":"method g(){ return 1; }"}

{"id":"c","code":"method h(y){ z = y; return z; }","group":"g1"}
"#;
        let c = parse_corpus(text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c[0].label.as_deref(), Some("id"));
        assert_eq!(c[2].group.as_deref(), Some("g1"));
        assert_eq!(c[2].program.name, "c");
    }

    #[test]
    fn unknown_fields_are_ignored() {
        let text = r#"{"id":"a","code":"method f(x){ return x; }","author":"someone","stars":3}"#;
        assert_eq!(parse_corpus(text).unwrap().len(), 1);
    }

    #[test]
    fn parse_failure_cites_record() {
        let text = r#"{"id":"a","code":"method f(x){ return x; }"}
{"id":"b","code":"method bad(){ goto NOPE; }"}
"#;
        match parse_corpus(text).unwrap_err() {
            CorpusError::Parse { record, id, .. } => {
                assert_eq!(record, 2);
                assert_eq!(id, "b");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json_cites_line() {
        let text = "{\"id\":\"a\",\"code\":\"method f(x){ return x; }\"}\n{not json}\n";
        match parse_corpus(text).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn write_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.jsonl");
        let recs = vec![CorpusRecord {
            id: "x".into(),
            code: "method f(a){ return a; }".into(),
            label: Some("l".into()),
            group: None,
        }];
        write_corpus(&path, &recs).unwrap();
        let back = load_corpus(&path).unwrap();
        assert_eq!(back[0].label.as_deref(), Some("l"));
    }
}
