//! Prompt sets: line-delimited JSON records with `id`, `text` and
//! `source_tag`.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Synthetic prompts bundled with the crate for offline runs.
pub const BUNDLED_FIXTURES: &str = include_str!("../fixtures/prompts.jsonl");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub id: String,
    pub text: String,
    pub source_tag: String,
}

pub fn load_prompt_set(path: &Path) -> Result<Vec<PromptRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_prompt_set(&text, path)
}

/// Parses prompt-set text; `origin` only labels error messages.
pub fn parse_prompt_set(text: &str, origin: &Path) -> Result<Vec<PromptRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: i + 1,
            message,
        };
        let record: PromptRecord =
            serde_json::from_str(line).map_err(|e| parse_error(e.to_string()))?;
        if record.text.is_empty() {
            return Err(parse_error("empty `text`".into()));
        }
        records.push(record);
    }
    validate_unique(&records)?;
    Ok(records)
}

pub fn bundled_fixtures() -> Vec<PromptRecord> {
    parse_prompt_set(BUNDLED_FIXTURES, Path::new("<bundled fixtures>"))
        .expect("bundled fixtures are valid")
}

fn validate_unique(records: &[PromptRecord]) -> Result<()> {
    let mut seen = HashSet::new();
    let mut duplicates: Vec<&str> = Vec::new();
    for r in records {
        if !seen.insert(r.id.as_str()) && !duplicates.contains(&r.id.as_str()) {
            duplicates.push(&r.id);
        }
    }
    if duplicates.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "duplicate ids: {}",
            duplicates.join(", ")
        )))
    }
}

/// Canonical serialization: one compact JSON object per line.
pub fn serialize_prompt_set(records: &[PromptRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Uniform sample of `count` records without replacement, sorted by id.
pub fn sample_split(
    records: &[PromptRecord],
    count: usize,
    seed: u64,
) -> Result<Vec<PromptRecord>> {
    if count > records.len() {
        return Err(Error::Precondition(format!(
            "cannot sample {count} of {} records",
            records.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample: Vec<PromptRecord> = index::sample(&mut rng, records.len(), count)
        .into_iter()
        .map(|i| records[i].clone())
        .collect();
    sample.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(sample)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str) -> PromptRecord {
        PromptRecord {
            id: id.into(),
            text: format!("prompt {id}"),
            source_tag: "t".into(),
        }
    }

    #[test]
    fn parses_in_file_order() {
        let text = serialize_prompt_set(&[rec("c"), rec("a"), rec("b")]);
        let parsed = parse_prompt_set(&text, Path::new("x")).unwrap();
        let ids: Vec<_> = parsed.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
        assert_eq!(serialize_prompt_set(&parsed), text);
    }

    #[test]
    fn missing_field_reports_line() {
        let text = "{\"id\":\"a\",\"text\":\"t\",\"source_tag\":\"s\"}\n{\"id\":\"b\",\"source_tag\":\"s\"}\n";
        match parse_prompt_set(text, Path::new("set.jsonl")) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_listed() {
        let text = serialize_prompt_set(&[rec("a"), rec("b"), rec("a")]);
        match parse_prompt_set(&text, Path::new("x")) {
            Err(Error::Validation(msg)) => {
                assert!(msg.contains("\"a\"") || msg.ends_with('a'), "{msg}")
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn sample_everything_sorted() {
        let records = vec![rec("b"), rec("c"), rec("a")];
        let all = sample_split(&records, 3, 7).unwrap();
        let ids: Vec<_> = all.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(sample_split(&records, 4, 7).is_err());
        assert_eq!(
            sample_split(&records, 2, 1).unwrap(),
            sample_split(&records, 2, 1).unwrap()
        );
    }

    #[test]
    fn bundled_fixture_set_is_valid() {
        assert!(bundled_fixtures().len() >= 20);
    }
}
