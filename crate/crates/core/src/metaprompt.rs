//! Meta-prompt assembly: role instruction, optional image descriptions,
//! scored history and the output directive, kept under a token budget.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::descriptions::DescriptionSet;
use crate::memory::{rank_order, PromptRecord};
use crate::template::CLASS_TOKEN;

pub const INS_TOKEN: &str = "<INS>";
pub const DEFAULT_TOKEN_BUDGET: usize = 5000;
pub const DEFAULT_CHARS_PER_TOKEN: f64 = 4.0;

/// Bumped whenever the shipped instruction wording changes.
pub const INSTRUCTION_VERSION: &str = "instruction-v1";

/// `{dataset}` is replaced by [`MetaPromptConfig::dataset_blurb`].
pub const DEFAULT_INSTRUCTION: &str = "\
You are an optimizer of text prompts for a vision-language model that classifies images of {dataset}. \
A prompt is written as <INS>. Every prompt must contain the token <CLASS> exactly once; <CLASS> stands \
for a category name and is replaced by each class name before the prompt is given to the text encoder. \
The model compares the image with every filled-in prompt and predicts the best match. \
Your goal is to write prompts that make this classification more accurate.";

const HISTORY_HEADER: &str = "\
Below are earlier prompts with their scores on the training images. \
The loss is a cross-entropy value from 0 upward, where lower is better. \
The accuracy is a percentage from 0 to 100, where higher is better. \
The prompts are listed in ascending order of accuracy.";

const TASK_TEMPLATE: &str = "\
Write {n} new prompts that are different from all prompts above and reach a lower loss and a higher accuracy. \
Each prompt must contain <CLASS> exactly once. \
Put every prompt on its own line and wrap it in square brackets, for example: [a photo of a <CLASS>.]";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetaPromptError {
    #[error("history is empty")]
    EmptyHistory,
    #[error("instruction must contain both <INS> and <CLASS>")]
    InstructionTokens,
    #[error("token budget must be positive")]
    ZeroBudget,
    #[error("meta-prompt needs {estimated} tokens at minimum, budget is {budget} (over by {})", estimated - budget)]
    BudgetUnreachable { estimated: usize, budget: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaPromptConfig {
    pub dataset_blurb: String,
    pub token_budget: usize,
    pub include_descriptions: bool,
    pub chars_per_token: f64,
    /// How many prompts the task directive asks for.
    pub num_candidates: usize,
    /// Replacement for [`DEFAULT_INSTRUCTION`].
    pub instruction: Option<String>,
}

impl Default for MetaPromptConfig {
    fn default() -> Self {
        Self {
            dataset_blurb: "images".into(),
            token_budget: DEFAULT_TOKEN_BUDGET,
            include_descriptions: true,
            chars_per_token: DEFAULT_CHARS_PER_TOKEN,
            num_candidates: 5,
            instruction: None,
        }
    }
}

impl MetaPromptConfig {
    pub fn estimate_tokens(&self, text: &str) -> usize {
        (text.chars().count() as f64 / self.chars_per_token).ceil() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Instruction,
    Descriptions,
    History,
    Task,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaPrompt {
    instruction: String,
    descriptions: Option<(String, Vec<String>)>,
    history_header: String,
    history: Vec<String>,
    task: String,
}

impl MetaPrompt {
    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn description_lines(&self) -> Option<&[String]> {
        self.descriptions.as_ref().map(|(_, lines)| lines.as_slice())
    }

    pub fn history_lines(&self) -> &[String] {
        &self.history
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    /// Rendered sections, in output order.
    pub fn sections(&self) -> Vec<(Section, String)> {
        let mut out = vec![(Section::Instruction, self.instruction.clone())];
        if let Some((header, lines)) = &self.descriptions {
            let mut text = header.clone();
            for line in lines {
                text.push('\n');
                text.push_str(line);
            }
            out.push((Section::Descriptions, text));
        }
        let mut history = self.history_header.clone();
        for line in &self.history {
            history.push('\n');
            history.push_str(line);
        }
        out.push((Section::History, history));
        out.push((Section::Task, self.task.clone()));
        out
    }

    pub fn full_text(&self) -> String {
        self.sections()
            .into_iter()
            .map(|(_, text)| text)
            .collect::<Vec<_>>()
            .join("\n\n")
    }
}

pub fn history_line(record: &PromptRecord) -> String {
    format!(
        "text: {} | loss: {:.4} | accuracy: {:.2}",
        record.template, record.scores.loss, record.scores.accuracy
    )
}

pub fn build(
    config: &MetaPromptConfig,
    descriptions: &DescriptionSet,
    history: &[PromptRecord],
) -> Result<MetaPrompt, MetaPromptError> {
    if history.is_empty() {
        return Err(MetaPromptError::EmptyHistory);
    }
    let instruction_template = config.instruction.as_deref().unwrap_or(DEFAULT_INSTRUCTION);
    let instruction = instruction_template.replace("{dataset}", &config.dataset_blurb);
    if !(instruction.contains(INS_TOKEN) && instruction.contains(CLASS_TOKEN)) {
        return Err(MetaPromptError::InstructionTokens);
    }

    let descriptions = (config.include_descriptions && !descriptions.is_empty()).then(|| {
        let header = format!(
            "Here is a description of some features of the {} in the image:",
            config.dataset_blurb
        );
        let lines = descriptions
            .iter()
            .flat_map(|(class, caps)| caps.iter().map(move |c| format!("{class}: {c}")))
            .collect();
        (header, lines)
    });

    let mut ordered: Vec<&PromptRecord> = history.iter().collect();
    // best last
    ordered.sort_by(|a, b| rank_order(b, a));
    let history = ordered.into_iter().map(history_line).collect();

    Ok(MetaPrompt {
        instruction,
        descriptions,
        history_header: HISTORY_HEADER.to_string(),
        history,
        task: TASK_TEMPLATE.replace("{n}", &config.num_candidates.to_string()),
    })
}

/// Drops the descriptions section, then the weakest history lines, until the
/// estimated token count fits. At least one history line always remains.
pub fn enforce_budget(
    meta: &MetaPrompt,
    config: &MetaPromptConfig,
) -> Result<MetaPrompt, MetaPromptError> {
    if config.token_budget == 0 {
        return Err(MetaPromptError::ZeroBudget);
    }
    let fits = |m: &MetaPrompt| config.estimate_tokens(&m.full_text()) <= config.token_budget;
    let mut out = meta.clone();
    if fits(&out) {
        return Ok(out);
    }
    if out.descriptions.take().is_some() {
        log::info!("meta-prompt over budget, dropping image descriptions");
    }
    while !fits(&out) && out.history.len() > 1 {
        out.history.remove(0);
    }
    if !fits(&out) {
        return Err(MetaPromptError::BudgetUnreachable {
            estimated: config.estimate_tokens(&out.full_text()),
            budget: config.token_budget,
        });
    }
    Ok(out)
}
