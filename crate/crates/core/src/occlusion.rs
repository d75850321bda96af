//! Occlusion sensitivity: remove words (or phrases) from a prompt, score what
//! is left on both splits, and tabulate how much each part matters.

use std::collections::HashSet;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluator::{Evaluator, SplitSpec};
use crate::scoring::SplitMetrics;
use crate::template::{normalize_text, PromptTemplate, TemplateError, CLASS_TOKEN};

pub const DEFAULT_MAX_VARIANTS: usize = 64;

const TERMINAL_PUNCTUATION: &[char] = &['.', ',', ';', ':', '!', '?'];

#[derive(Debug, Error)]
pub enum OcclusionError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("phrase {0:?} does not occur in the prompt")]
    PhraseNotFound(String),
    #[error("max_variants must be at least 1")]
    ZeroCap,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    /// Keep one contiguous run of context units.
    Windows,
    /// Keep any nonempty ordered subset of context units.
    Subsets,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segmentation {
    Word,
    /// Multi-word units; words not covered by a phrase stay single units.
    UserPhrases(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionPolicy {
    pub mode: OcclusionMode,
    pub max_variants: usize,
    pub segmentation: Segmentation,
}

impl Default for OcclusionPolicy {
    fn default() -> Self {
        Self { mode: OcclusionMode::Windows, max_variants: DEFAULT_MAX_VARIANTS, segmentation: Segmentation::Word }
    }
}

impl OcclusionPolicy {
    pub fn subsets(max_variants: usize) -> Self {
        Self { mode: OcclusionMode::Subsets, max_variants, segmentation: Segmentation::Word }
    }
}

/// A prompt split into context units around the class token.
#[derive(Debug, Clone, PartialEq)]
struct Parsed {
    /// Context units in reading order.
    units: Vec<String>,
    /// Number of units that precede the class token.
    class_at: usize,
    class_token: String,
    terminal: String,
}

impl Parsed {
    fn render(&self, keep: &[usize]) -> String {
        let mut parts: Vec<&str> = Vec::with_capacity(keep.len() + 1);
        let mut placed = false;
        for &i in keep {
            if !placed && i >= self.class_at {
                parts.push(&self.class_token);
                placed = true;
            }
            parts.push(&self.units[i]);
        }
        if !placed {
            parts.push(&self.class_token);
        }
        format!("{}{}", parts.join(" "), self.terminal)
    }
}

fn split_terminal(token: &str) -> (&str, &str) {
    let core = token.trim_end_matches(TERMINAL_PUNCTUATION);
    (core, &token[core.len()..])
}

fn parse(template: &PromptTemplate, segmentation: &Segmentation) -> Result<Parsed, OcclusionError> {
    let mut tokens: Vec<String> = template.as_str().split_whitespace().map(str::to_string).collect();
    let last = tokens.len() - 1;
    let (core, terminal) = split_terminal(&tokens[last]);
    let terminal = terminal.to_string();
    tokens[last] = core.to_string();

    let class_idx = tokens.iter().position(|t| t.contains(CLASS_TOKEN)).expect("validated template");
    let class_token = split_terminal(&tokens[class_idx]).0.to_string();
    let words: Vec<String> = tokens.iter().enumerate().filter(|(i, _)| *i != class_idx).map(|(_, t)| t.clone()).collect();

    let (units, class_at) = match segmentation {
        Segmentation::Word => (words, class_idx),
        Segmentation::UserPhrases(phrases) => group_phrases(&words, class_idx, phrases)?,
    };
    Ok(Parsed { units, class_at, class_token, terminal })
}

fn group_phrases(
    words: &[String],
    class_idx: usize,
    phrases: &[String],
) -> Result<(Vec<String>, usize), OcclusionError> {
    let key = |w: &str| split_terminal(w).0.to_lowercase();
    let phrase_words: Vec<Vec<String>> = phrases
        .iter()
        .map(|p| p.split_whitespace().map(key).collect::<Vec<_>>())
        .filter(|p| !p.is_empty())
        .collect();
    let mut used = vec![false; phrase_words.len()];
    let mut units = Vec::new();
    let mut class_at = None;
    let mut i = 0;
    while i < words.len() {
        if i >= class_idx && class_at.is_none() {
            class_at = Some(units.len());
        }
        // phrases do not straddle the class token
        let limit = if i < class_idx { class_idx } else { words.len() };
        let hit = phrase_words.iter().position(|p| {
            i + p.len() <= limit && p.iter().zip(&words[i..]).all(|(a, b)| *a == key(b))
        });
        match hit {
            Some(p) => {
                used[p] = true;
                let len = phrase_words[p].len();
                units.push(words[i..i + len].join(" "));
                i += len;
            }
            None => {
                units.push(words[i].clone());
                i += 1;
            }
        }
    }
    let class_at = class_at.unwrap_or(units.len());
    if let Some(missing) = used.iter().position(|u| !u) {
        return Err(OcclusionError::PhraseNotFound(phrases[missing].clone()));
    }
    Ok((units, class_at))
}

/// Visits index combinations of `size` out of `n` in lexicographic order.
fn combinations(n: usize, size: usize, mut visit: impl FnMut(&[usize]) -> bool) {
    if size > n {
        return;
    }
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        if !visit(&idx) {
            return;
        }
        let Some(pos) = (0..size).rev().find(|&p| idx[p] != p + n - size) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..size {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Occluded variants of `template`, ending with the template itself.
pub fn variants(template: &PromptTemplate, policy: &OcclusionPolicy) -> Result<Vec<PromptTemplate>, OcclusionError> {
    if policy.max_variants == 0 {
        return Err(OcclusionError::ZeroCap);
    }
    let parsed = parse(template, &policy.segmentation)?;
    let m = parsed.units.len();
    let original_key = template.normalized();
    let mut seen: HashSet<String> = HashSet::from([original_key]);
    let mut out: Vec<PromptTemplate> = Vec::new();
    let mut push = |text: String| -> Result<bool, OcclusionError> {
        if out.len() >= policy.max_variants {
            return Ok(false);
        }
        if seen.insert(normalize_text(&text)) {
            out.push(PromptTemplate::new(text)?);
        }
        Ok(out.len() < policy.max_variants)
    };

    // the full selection is the original, appended last
    match policy.mode {
        OcclusionMode::Windows => {
            'sizes: for size in 0..m {
                for start in 0..=m - size {
                    let keep: Vec<usize> = (start..start + size).collect();
                    if !push(parsed.render(&keep))? {
                        break 'sizes;
                    }
                    if size == 0 {
                        break;
                    }
                }
            }
        }
        OcclusionMode::Subsets => {
            let mut result = Ok(());
            'outer: for size in 1..m {
                let mut more = true;
                combinations(m, size, |keep| {
                    match push(parsed.render(keep)) {
                        Ok(go) => more = go,
                        Err(e) => {
                            result = Err(e);
                            more = false;
                        }
                    }
                    more
                });
                if !more {
                    break 'outer;
                }
            }
            result?;
        }
    }
    out.push(template.clone());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRow {
    pub variant: PromptTemplate,
    pub metrics: Option<SplitMetrics>,
    pub is_original: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcclusionTable {
    pub original: PromptTemplate,
    pub rows: Vec<OcclusionRow>,
}

pub fn analyze(
    template: &PromptTemplate,
    policy: &OcclusionPolicy,
    evaluator: &dyn Evaluator,
    base_split: &SplitSpec,
    novel_split: &SplitSpec,
) -> Result<OcclusionTable, OcclusionError> {
    let list = variants(template, policy)?;
    Ok(analyze_variants(template, &list, evaluator, base_split, novel_split))
}

/// Scores an explicit list of variants (including free-form rewrites).
/// The original is added if the list does not contain it.
pub fn analyze_variants(
    original: &PromptTemplate,
    variants: &[PromptTemplate],
    evaluator: &dyn Evaluator,
    base_split: &SplitSpec,
    novel_split: &SplitSpec,
) -> OcclusionTable {
    let key = original.normalized();
    let mut list: Vec<PromptTemplate> = variants.to_vec();
    if !list.iter().any(|v| v.normalized() == key) {
        list.push(original.clone());
    }
    let mut rows: Vec<(usize, OcclusionRow)> = list
        .par_iter()
        .enumerate()
        .map(|(i, variant)| {
            let scored = evaluator
                .score(variant, base_split)
                .and_then(|b| evaluator.score(variant, novel_split).map(|n| (b, n)))
                .map_err(|e| e.to_string())
                .and_then(|(b, n)| SplitMetrics::new(b.accuracy, n.accuracy).map_err(|e| e.to_string()));
            let (metrics, error) = match scored {
                Ok(m) => (Some(m), None),
                Err(e) => (None, Some(e)),
            };
            (i, OcclusionRow { variant: variant.clone(), metrics, is_original: variant.normalized() == key, error })
        })
        .collect();
    // ascending H, failures last, ties by variant position
    rows.sort_by(|(ia, a), (ib, b)| match (&a.metrics, &b.metrics) {
        (Some(x), Some(y)) => x.h.total_cmp(&y.h).then(ia.cmp(ib)),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => ia.cmp(ib),
    });
    OcclusionTable { original: original.clone(), rows: rows.into_iter().map(|(_, r)| r).collect() }
}

impl OcclusionTable {
    /// Columns `prompt,base,novel,H,is_original`; failed rows leave the scores empty.
    pub fn write_csv(&self, out: impl Write) -> Result<(), OcclusionError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["prompt", "base", "novel", "H", "is_original"])?;
        for row in &self.rows {
            let cell = |v: Option<f64>| v.map(|x| format!("{x:.2}")).unwrap_or_default();
            w.write_record([
                row.variant.as_str().to_string(),
                cell(row.metrics.map(|m| m.base)),
                cell(row.metrics.map(|m| m.novel)),
                cell(row.metrics.map(|m| m.h)),
                row.is_original.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json(&self, out: impl Write) -> Result<(), OcclusionError> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}
