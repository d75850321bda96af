//! Precomputed image descriptions (LMM captions) for the meta-prompt.
//!
//! Records live in JSONL, one per line:
//! `{"dataset": str, "class": str, "image": str, "description": str}`.
//! Captions that name their own class are excluded with a warning unless
//! [`LoadOptions::keep_violations`] is set.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::template::ClassList;

pub const DEFAULT_MAX_DESCRIPTION_CHARS: usize = 400;

#[derive(Debug, Error)]
pub enum DescriptionError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub dataset: String,
    pub class: String,
    pub image: String,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WarningKind {
    NamesClass,
    Empty,
    TooLong { len: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadWarning {
    pub line: usize,
    pub class: String,
    pub kind: WarningKind,
    pub kept: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct LoadOptions {
    pub keep_violations: bool,
    pub max_chars: usize,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { keep_violations: false, max_chars: DEFAULT_MAX_DESCRIPTION_CHARS }
    }
}

/// Captions grouped by class, in class-list order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DescriptionSet {
    entries: Vec<(String, Vec<String>)>,
}

impl DescriptionSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, class: &str, description: impl Into<String>) {
        match self.entries.iter_mut().find(|(c, _)| c == class) {
            Some((_, list)) => list.push(description.into()),
            None => self.entries.push((class.to_string(), vec![description.into()])),
        }
    }

    pub fn get(&self, class: &str) -> Option<&[String]> {
        self.entries.iter().find(|(c, _)| c == class).map(|(_, v)| v.as_slice())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(c, v)| (c.as_str(), v.as_slice()))
    }

    /// Number of classes with at least one caption.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn caption_count(&self) -> usize {
        self.entries.iter().map(|(_, v)| v.len()).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct LoadedDescriptions {
    pub set: DescriptionSet,
    pub warnings: Vec<LoadWarning>,
}

pub fn load(
    path: impl AsRef<Path>,
    dataset_id: &str,
    classes: &ClassList,
    options: LoadOptions,
) -> Result<LoadedDescriptions, DescriptionError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)
        .map_err(|source| DescriptionError::Io { path: path.display().to_string(), source })?;
    parse_jsonl(&text, dataset_id, classes, options)
}

pub fn parse_jsonl(
    text: &str,
    dataset_id: &str,
    classes: &ClassList,
    options: LoadOptions,
) -> Result<LoadedDescriptions, DescriptionError> {
    let mut grouped: Vec<Vec<String>> = vec![Vec::new(); classes.len()];
    let mut warnings = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let record: DescriptionRecord = serde_json::from_str(raw)
            .map_err(|e| DescriptionError::Malformed { line, message: e.to_string() })?;
        if record.dataset != dataset_id {
            continue;
        }
        let Some(slot) = classes.names().iter().position(|c| *c == record.class) else {
            continue;
        };
        let description = record.description.trim().to_string();
        let len = description.chars().count();
        // hard limits come first; they are never kept
        let kind = if description.is_empty() {
            Some((WarningKind::Empty, false))
        } else if len > options.max_chars {
            Some((WarningKind::TooLong { len, max: options.max_chars }, false))
        } else if description.to_lowercase().contains(&record.class.to_lowercase()) {
            Some((WarningKind::NamesClass, options.keep_violations))
        } else {
            None
        };
        if let Some((kind, kept)) = kind {
            log::warn!("description line {line} for class {:?}: {kind:?}", record.class);
            warnings.push(LoadWarning { line, class: record.class.clone(), kind, kept });
            if !kept {
                continue;
            }
        }
        grouped[slot].push(description);
    }
    let mut set = DescriptionSet::new();
    for (class, list) in classes.names().iter().zip(grouped) {
        for d in list {
            set.push(class, d);
        }
    }
    Ok(LoadedDescriptions { set, warnings })
}

/// Converts a two-column `class,description` CSV into JSONL records.
pub fn csv_to_jsonl(
    csv_text: &str,
    dataset_id: &str,
    out: &mut impl Write,
) -> Result<usize, DescriptionError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(false)
        .from_reader(csv_text.as_bytes());
    let mut count = 0;
    for (idx, row) in reader.records().enumerate() {
        let row = row?;
        if row.len() != 2 {
            return Err(DescriptionError::Malformed {
                line: idx + 1,
                message: format!("expected 2 columns, found {}", row.len()),
            });
        }
        let record = DescriptionRecord {
            dataset: dataset_id.to_string(),
            class: row[0].trim().to_string(),
            image: format!("{}-{}", row[0].trim(), idx),
            description: row[1].trim().to_string(),
        };
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(out, "{line}").map_err(|source| DescriptionError::Io {
            path: "<output>".into(),
            source,
        })?;
        count += 1;
    }
    Ok(count)
}
