//! One-object-per-line dataset files.

use std::io::Write;
use std::path::Path;

use diffinject_core::data::{render, EditSample, KnowledgeSample};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::LineError;
use crate::{Error, Result};

/// Parsed items plus the lines that failed. Blank lines are ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub errors: Vec<LineError>,
}

pub fn parse_jsonl<T: DeserializeOwned>(text: &str, check: impl Fn(&T) -> std::result::Result<(), String>) -> Parsed<T> {
    let mut out = Parsed { items: Vec::new(), errors: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str::<T>(line).map_err(|e| e.to_string()).and_then(|v| check(&v).map(|_| v));
        match item {
            Ok(v) => out.items.push(v),
            Err(message) => out.errors.push(LineError { line: i + 1, message }),
        }
    }
    out
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(Error::io(path))
}

fn strict<T>(path: &Path, parsed: Parsed<T>) -> Result<Vec<T>> {
    if parsed.errors.is_empty() {
        Ok(parsed.items)
    } else {
        Err(Error::Lines { path: path.into(), errors: parsed.errors })
    }
}

/// Samples must render, which requires a non-empty target.
pub fn parse_samples(text: &str) -> Parsed<KnowledgeSample> {
    parse_jsonl(text, |s: &KnowledgeSample| render(s).map(|_| ()).map_err(|e| e.to_string()))
}

/// Loads `knowledge`/`source`/`target` records; any malformed line fails
/// the load and every bad line is reported.
pub fn load_samples(path: &Path) -> Result<Vec<KnowledgeSample>> {
    strict(path, parse_samples(&read(path)?))
}

pub fn load_edits(path: &Path) -> Result<Vec<EditSample>> {
    let parsed = parse_jsonl(&read(path)?, |e: &EditSample| e.validate().map_err(|e| e.to_string()));
    strict(path, parsed)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    std::fs::File::create(path).and_then(|mut f| f.write_all(&out)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_knowledge_is_valid() {
        let p = parse_samples(r#"{"knowledge": [], "source": "q", "target": "a"}"#);
        assert!(p.errors.is_empty());
        assert_eq!(render(&p.items[0]).unwrap().k_len, 0);
    }

    #[test]
    fn bad_lines_are_reported_and_the_rest_load() {
        let text = concat!(
            r#"{"knowledge": ["A is b"], "source": "what is A?", "target": "b"}"#,
            "\n",
            r#"{"knowledge": [], "source": "q"}"#,
            "\n\n",
            "not json\n",
            r#"{"knowledge": [], "source": "q", "target": ""}"#,
            "\n",
            r#"{"knowledge": [], "source": "q", "target": "ok"}"#,
        );
        let p = parse_samples(text);
        assert_eq!(p.items.len(), 2);
        assert_eq!(p.errors.iter().map(|e| e.line).collect::<Vec<_>>(), vec![2, 4, 5]);
        assert!(p.errors[0].message.contains("target"), "{}", p.errors[0].message);
    }

    #[test]
    fn empty_file_is_empty_list() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.jsonl");
        std::fs::write(&path, "").unwrap();
        assert!(load_samples(&path).unwrap().is_empty());
    }

    #[test]
    fn strict_load_lists_every_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{}\n{}\n").unwrap();
        match load_samples(&path) {
            Err(Error::Lines { errors, .. }) => assert_eq!(errors.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #[test]
        fn write_then_load_preserves_fields(
            rows in proptest::collection::vec(
                (proptest::collection::vec(".{0,12}", 0..3), ".{0,16}", ".{1,8}"), 0..6)
        ) {
            let samples: Vec<KnowledgeSample> =
                rows.into_iter().map(|(k, s, t)| KnowledgeSample::new(k, s, t)).collect();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("s.jsonl");
            write_jsonl(&path, &samples).unwrap();
            prop_assert_eq!(load_samples(&path).unwrap(), samples);
        }
    }
}
