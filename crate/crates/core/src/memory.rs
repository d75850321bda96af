//! Episodic memory of scored prompts.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{EvalScores, ScoringError};
use crate::template::PromptTemplate;

pub const DEFAULT_MEMORY_K: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MemoryError {
    #[error("memory already holds an anchor")]
    AlreadySeeded,
    #[error("memory is empty")]
    Empty,
    #[error("memory has no anchor; seed it before inserting")]
    NotSeeded,
    #[error("record step {0} is reserved for anchor and seed records")]
    ReservedStep(usize),
    #[error(transparent)]
    Scores(#[from] ScoringError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Anchor,
    Llm,
    Seed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub template: PromptTemplate,
    pub scores: EvalScores,
    pub step: usize,
    pub origin: Origin,
}

impl PromptRecord {
    pub fn new(
        template: PromptTemplate,
        scores: EvalScores,
        step: usize,
        origin: Origin,
    ) -> Result<Self, MemoryError> {
        let scores = EvalScores::new(scores.loss, scores.accuracy)?;
        if origin == Origin::Llm && step == 0 {
            return Err(MemoryError::ReservedStep(step));
        }
        Ok(Self { template, scores, step, origin })
    }
}

/// Ranking used everywhere a "best" prompt is needed: higher accuracy, then
/// lower loss, then earlier step, then lexicographic text.
pub fn rank_order(a: &PromptRecord, b: &PromptRecord) -> Ordering {
    b.scores
        .accuracy
        .total_cmp(&a.scores.accuracy)
        .then(a.scores.loss.total_cmp(&b.scores.loss))
        .then(a.step.cmp(&b.step))
        .then_with(|| a.template.as_str().cmp(b.template.as_str()))
}

#[derive(Debug, Clone)]
pub struct MemoryState {
    records: Vec<PromptRecord>,
    seen: HashSet<String>,
    anchor: Option<usize>,
    k: usize,
}

impl Default for MemoryState {
    fn default() -> Self {
        Self::new(DEFAULT_MEMORY_K)
    }
}

impl MemoryState {
    pub fn new(k: usize) -> Self {
        Self { records: Vec::new(), seen: HashSet::new(), anchor: None, k }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PromptRecord] {
        &self.records
    }

    pub fn anchor(&self) -> Option<&PromptRecord> {
        self.anchor.map(|i| &self.records[i])
    }

    pub fn contains(&self, template: &PromptTemplate) -> bool {
        self.seen.contains(&template.normalized())
    }

    pub fn get(&self, template: &PromptTemplate) -> Option<&PromptRecord> {
        let key = template.normalized();
        self.records.iter().find(|r| r.template.normalized() == key)
    }

    /// Stores the anchor prompt with its evaluated scores at step 0.
    pub fn seed_anchor(&mut self, anchor_scores: EvalScores) -> Result<(), MemoryError> {
        if self.anchor.is_some() || !self.records.is_empty() {
            return Err(MemoryError::AlreadySeeded);
        }
        let record = PromptRecord::new(PromptTemplate::anchor(), anchor_scores, 0, Origin::Anchor)?;
        self.seen.insert(record.template.normalized());
        self.records.push(record);
        self.anchor = Some(0);
        Ok(())
    }

    /// Appends the record unless its normalized text is already stored.
    /// Returns whether the record was added.
    pub fn insert(&mut self, record: PromptRecord) -> Result<bool, MemoryError> {
        let record = PromptRecord::new(record.template, record.scores, record.step, record.origin)?;
        if record.origin == Origin::Anchor {
            return Err(MemoryError::AlreadySeeded);
        }
        if !self.seen.insert(record.template.normalized()) {
            return Ok(false);
        }
        self.records.push(record);
        Ok(true)
    }

    /// The `k` best non-anchor records by rank, followed by the anchor.
    /// The anchor never occupies one of the `k` slots, so the result holds
    /// at most `k + 1` records and the anchor exactly once.
    pub fn top_k(&self) -> Vec<PromptRecord> {
        let mut ranked: Vec<&PromptRecord> =
            self.records.iter().filter(|r| r.origin != Origin::Anchor).collect();
        ranked.sort_by(|a, b| rank_order(a, b));
        let mut out: Vec<PromptRecord> = ranked.into_iter().take(self.k).cloned().collect();
        if let Some(anchor) = self.anchor() {
            out.push(anchor.clone());
        }
        out
    }

    pub fn best(&self) -> Result<&PromptRecord, MemoryError> {
        self.records
            .iter()
            .min_by(|a, b| rank_order(a, b))
            .ok_or(MemoryError::Empty)
    }
}
