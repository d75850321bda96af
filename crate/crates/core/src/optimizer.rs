//! The optimization loop.
//!
//! Each step retrieves the top-k scored prompts from memory, renders the
//! meta-prompt, asks the LLM for new candidates, scores them on the base
//! split and stores them. The run ends at `max_steps`, after `patience`
//! steps without a better best accuracy, or after `patience` consecutive
//! steps in which the LLM produced nothing usable. The best prompt is then
//! re-scored on the base and novel splits.
//!
//! Novel-split scores never enter memory or the meta-prompt.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::descriptions::DescriptionSet;
use crate::evaluator::{EvalError, Evaluator, SplitSpec};
use crate::llm::{propose, ChatBackend, LlmConfig, LlmError};
use crate::memory::{MemoryError, MemoryState, Origin, PromptRecord, DEFAULT_MEMORY_K};
use crate::metaprompt::{build, enforce_budget, MetaPromptConfig, MetaPromptError, INSTRUCTION_VERSION};
use crate::scoring::{EvalScores, ScoringError, SplitMetrics};
use crate::template::{PromptTemplate, SplitRole};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("evaluator: {0}")]
    Eval(#[from] EvalError),
    #[error("llm: {0}")]
    Llm(#[from] LlmError),
    #[error("memory: {0}")]
    Memory(#[from] MemoryError),
    #[error("meta-prompt: {0}")]
    MetaPrompt(#[from] MetaPromptError),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error("history: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// Evaluator and LLM failures, as opposed to bad input.
    pub fn is_backend(&self) -> bool {
        matches!(self, RunError::Eval(_) | RunError::Llm(LlmError::Transport(_) | LlmError::Http { .. } | LlmError::Decode(_)))
    }
}

fn config_error(field: &str, message: impl Into<String>) -> RunError {
    RunError::Config { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "defaults::max_steps")]
    pub max_steps: usize,
    #[serde(default = "defaults::candidates")]
    pub candidates_per_step: usize,
    #[serde(default = "defaults::memory_k")]
    pub memory_k: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub meta: MetaPromptConfig,
    /// Opaque description of the evaluator backend, recorded in the history header.
    #[serde(default)]
    pub evaluator: serde_json::Value,
    pub base_split: SplitSpec,
    pub novel_split: SplitSpec,
}

mod defaults {
    pub fn max_steps() -> usize {
        100
    }
    pub fn candidates() -> usize {
        5
    }
    pub fn memory_k() -> usize {
        super::DEFAULT_MEMORY_K
    }
    pub fn patience() -> usize {
        20
    }
}

impl RunConfig {
    pub fn new(base_split: SplitSpec, novel_split: SplitSpec) -> Self {
        Self {
            max_steps: defaults::max_steps(),
            candidates_per_step: defaults::candidates(),
            memory_k: defaults::memory_k(),
            patience: defaults::patience(),
            seed: 0,
            llm: LlmConfig::default(),
            meta: MetaPromptConfig::default(),
            evaluator: serde_json::Value::Null,
            base_split,
            novel_split,
        }
    }

    pub fn validate(&self) -> Result<(), RunError> {
        if self.max_steps == 0 {
            return Err(config_error("run.max_steps", "must be positive"));
        }
        if self.candidates_per_step == 0 {
            return Err(config_error("run.candidates_per_step", "must be positive"));
        }
        if self.patience == 0 {
            return Err(config_error("run.patience", "must be positive"));
        }
        if self.patience > self.max_steps {
            return Err(config_error(
                "run.patience",
                format!("patience {} exceeds max_steps {}", self.patience, self.max_steps),
            ));
        }
        if self.meta.token_budget == 0 {
            return Err(config_error("meta.token_budget", "must be positive"));
        }
        if !(self.meta.chars_per_token.is_finite() && self.meta.chars_per_token > 0.0) {
            return Err(config_error("meta.chars_per_token", "must be positive"));
        }
        if self.base_split.role != SplitRole::Base {
            return Err(config_error("base_split.role", "must be \"base\""));
        }
        if self.novel_split.role != SplitRole::Novel {
            return Err(config_error("novel_split.role", "must be \"novel\""));
        }
        for (field, split) in [("base_split.shots", &self.base_split), ("novel_split.shots", &self.novel_split)] {
            if split.shots == 0 {
                return Err(config_error(field, "must be positive"));
            }
        }
        self.llm.validate().map_err(|e| config_error("llm", e.to_string()))
    }

    /// Stable identifier derived from the serialized config.
    pub fn run_id(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(json);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Meta-prompt settings with the directive matched to the candidate count.
    fn meta_config(&self) -> MetaPromptConfig {
        MetaPromptConfig { num_candidates: self.candidates_per_step, ..self.meta.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxSteps,
    Patience,
    LlmExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub meta_prompt: String,
    pub raw_response: String,
}

/// One optimization step, as written to the run history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEntry {
    pub step: usize,
    pub candidates: Vec<PromptTemplate>,
    pub candidate_scores: Vec<EvalScores>,
    pub mean_loss: Option<f64>,
    pub std_loss: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub best_so_far_accuracy: f64,
    pub inserted: Vec<PromptRecord>,
    pub rejected: usize,
    pub llm_attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<Exchange>,
}

/// Population mean and standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub memory: MemoryState,
    pub trajectory: Vec<StepEntry>,
    /// Consecutive steps without a strictly better best accuracy.
    pub stagnant_steps: usize,
    /// Consecutive steps in which the LLM yielded no valid candidate.
    pub empty_steps: usize,
    pub base_evaluations: usize,
}

impl RunState {
    pub fn best_accuracy(&self) -> f64 {
        self.memory.best().map(|r| r.scores.accuracy).unwrap_or(0.0)
    }

    pub fn steps_done(&self) -> usize {
        self.trajectory.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub best: PromptRecord,
    pub base_scores: EvalScores,
    pub novel_scores: EvalScores,
    pub metrics: SplitMetrics,
    pub stop_reason: StopReason,
    pub steps: usize,
    pub base_evaluations: usize,
    #[serde(skip)]
    pub trajectory: Vec<StepEntry>,
    #[serde(skip)]
    pub memory_dump: Vec<PromptRecord>,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum HistoryLine<'a> {
    Header {
        run_id: &'a str,
        instruction_version: &'a str,
        instruction: &'a str,
        config: &'a RunConfig,
        anchor: &'a PromptRecord,
    },
    Step(&'a StepEntry),
    Final(&'a RunResult),
    Error { message: String },
}

fn write_line(out: &mut Option<&mut dyn Write>, line: &HistoryLine<'_>) -> Result<(), RunError> {
    if let Some(w) = out.as_mut() {
        serde_json::to_writer(&mut *w, line).map_err(io::Error::from)?;
        w.write_all(b"\n")?;
        w.flush()?;
    }
    Ok(())
}

pub struct Optimizer<'a> {
    config: RunConfig,
    evaluator: &'a dyn Evaluator,
    llm: &'a dyn ChatBackend,
    descriptions: DescriptionSet,
}

impl<'a> Optimizer<'a> {
    pub fn new(config: RunConfig, evaluator: &'a dyn Evaluator, llm: &'a dyn ChatBackend) -> Result<Self, RunError> {
        config.validate()?;
        Ok(Self { config, evaluator, llm, descriptions: DescriptionSet::new() })
    }

    pub fn with_descriptions(mut self, descriptions: DescriptionSet) -> Self {
        self.descriptions = descriptions;
        self
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Scores the anchor on the base split and seeds memory with it.
    pub fn start(&self) -> Result<RunState, RunError> {
        let scores = self.evaluator.score(&PromptTemplate::anchor(), &self.config.base_split)?;
        let mut memory = MemoryState::new(self.config.memory_k);
        memory.seed_anchor(scores)?;
        Ok(RunState { memory, trajectory: Vec::new(), stagnant_steps: 0, empty_steps: 0, base_evaluations: 1 })
    }

    /// One build → propose → score → insert iteration.
    pub fn step(&self, state: &mut RunState) -> Result<(), RunError> {
        let step = state.trajectory.len() + 1;
        let meta_config = self.config.meta_config();
        let history = state.memory.top_k();
        let meta = enforce_budget(&build(&meta_config, &self.descriptions, &history)?, &meta_config)?;
        let candidates = propose(self.llm, &meta, self.config.candidates_per_step, &self.config.llm)?;

        // previously stored texts reuse their scores; the rest are scored in parallel
        let fresh: Vec<&PromptTemplate> =
            candidates.templates.iter().filter(|t| !state.memory.contains(t)).collect();
        let fresh_scores: Vec<EvalScores> = fresh
            .par_iter()
            .map(|t| self.evaluator.score(t, &self.config.base_split))
            .collect::<Result<_, _>>()?;
        state.base_evaluations += fresh.len();

        let mut fresh_iter = fresh_scores.into_iter();
        let mut candidate_scores = Vec::with_capacity(candidates.templates.len());
        let mut inserted = Vec::new();
        let previous_best = state.best_accuracy();
        for template in &candidates.templates {
            let scores = match state.memory.get(template) {
                Some(existing) => existing.scores,
                None => {
                    let scores = fresh_iter.next().expect("one score per fresh candidate");
                    let record = PromptRecord::new(template.clone(), scores, step, Origin::Llm)?;
                    if state.memory.insert(record.clone())? {
                        inserted.push(record);
                    }
                    scores
                }
            };
            candidate_scores.push(scores);
        }

        let best = state.best_accuracy();
        if best > previous_best {
            state.stagnant_steps = 0;
        } else {
            state.stagnant_steps += 1;
        }
        if candidates.templates.is_empty() {
            state.empty_steps += 1;
        } else {
            state.empty_steps = 0;
        }

        let losses: Vec<f64> = candidate_scores.iter().map(|s| s.loss).collect();
        let accuracies: Vec<f64> = candidate_scores.iter().map(|s| s.accuracy).collect();
        let loss_stats = mean_std(&losses);
        let acc_stats = mean_std(&accuracies);
        state.trajectory.push(StepEntry {
            step,
            candidates: candidates.templates.clone(),
            candidate_scores,
            mean_loss: loss_stats.map(|s| s.0),
            std_loss: loss_stats.map(|s| s.1),
            mean_accuracy: acc_stats.map(|s| s.0),
            std_accuracy: acc_stats.map(|s| s.1),
            best_so_far_accuracy: best,
            inserted,
            rejected: candidates.rejected.len(),
            llm_attempts: candidates.attempts,
            exchange: self.config.llm.verbose.then(|| Exchange {
                meta_prompt: meta.full_text(),
                raw_response: candidates.raw_response.clone(),
            }),
        });
        Ok(())
    }

    pub fn stop_reason(&self, state: &RunState) -> Option<StopReason> {
        if state.empty_steps >= self.config.patience {
            Some(StopReason::LlmExhausted)
        } else if state.stagnant_steps >= self.config.patience {
            Some(StopReason::Patience)
        } else if state.trajectory.len() >= self.config.max_steps {
            Some(StopReason::MaxSteps)
        } else {
            None
        }
    }

    /// Re-scores the best stored prompt on both splits.
    pub fn finalize(&self, state: RunState, stop_reason: StopReason) -> Result<RunResult, RunError> {
        let best = state.memory.best()?.clone();
        let base_scores = self.evaluator.score(&best.template, &self.config.base_split)?;
        let novel_scores = self.evaluator.score(&best.template, &self.config.novel_split)?;
        let metrics = SplitMetrics::new(base_scores.accuracy, novel_scores.accuracy)?;
        Ok(RunResult {
            run_id: self.config.run_id(),
            best,
            base_scores,
            novel_scores,
            metrics,
            stop_reason,
            steps: state.trajectory.len(),
            base_evaluations: state.base_evaluations + 1,
            memory_dump: state.memory.records().to_vec(),
            trajectory: state.trajectory,
        })
    }

    pub fn run(&self) -> Result<RunResult, RunError> {
        self.run_inner(None)
    }

    /// Runs to completion, streaming the history JSONL to `history`.
    /// On failure an error line is written after the steps completed so far.
    pub fn run_with_history(&self, history: &mut dyn Write) -> Result<RunResult, RunError> {
        self.run_inner(Some(history))
    }

    fn run_inner(&self, mut history: Option<&mut dyn Write>) -> Result<RunResult, RunError> {
        let result = self.drive(&mut history);
        if let Err(e) = &result {
            // best effort: the original error matters more than a failed write
            let _ = write_line(&mut history, &HistoryLine::Error { message: e.to_string() });
        }
        result
    }

    fn drive(&self, history: &mut Option<&mut dyn Write>) -> Result<RunResult, RunError> {
        let mut state = self.start()?;
        let run_id = self.config.run_id();
        let instruction = self.config.meta.instruction.as_deref().unwrap_or(crate::metaprompt::DEFAULT_INSTRUCTION);
        let anchor = state.memory.anchor().expect("seeded").clone();
        write_line(
            history,
            &HistoryLine::Header {
                run_id: &run_id,
                instruction_version: INSTRUCTION_VERSION,
                instruction,
                config: &self.config,
                anchor: &anchor,
            },
        )?;
        let stop = loop {
            self.step(&mut state)?;
            write_line(history, &HistoryLine::Step(state.trajectory.last().expect("step pushed")))?;
            if let Some(reason) = self.stop_reason(&state) {
                break reason;
            }
        };
        log::info!("run {run_id} stopped after {} steps: {stop:?}", state.trajectory.len());
        let result = self.finalize(state, stop)?;
        write_line(history, &HistoryLine::Final(&result))?;
        Ok(result)
    }
}

/// Runs the same configuration once per memory size. `make_llm` supplies a
/// fresh backend for each run so scripted transcripts restart.
pub fn sweep_memory_k<F, B>(
    base: &RunConfig,
    ks: &[usize],
    evaluator: &dyn Evaluator,
    make_llm: F,
) -> Result<Vec<(usize, RunResult)>, RunError>
where
    F: Fn() -> B,
    B: ChatBackend,
{
    ks.iter()
        .map(|&k| {
            let llm = make_llm();
            let config = RunConfig { memory_k: k, ..base.clone() };
            Optimizer::new(config, evaluator, &llm)?.run().map(|r| (k, r))
        })
        .collect()
}
