//! Prompt templates and class lists.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The class placeholder every template carries exactly once.
pub const CLASS_TOKEN: &str = "<CLASS>";

/// Default cap on template length, in characters.
pub const DEFAULT_MAX_TEMPLATE_CHARS: usize = 400;

/// The canonical CLIP prompt, always present in the optimizer's history.
pub const ANCHOR_TEXT: &str = "a photo of a <CLASS>.";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TemplateError {
    #[error("placeholder count ≠ 1 (found {0})")]
    PlaceholderCount(usize),
    #[error("template is empty")]
    Empty,
    #[error("template is {len} characters, limit is {max}")]
    TooLong { len: usize, max: usize },
    #[error("class name is empty")]
    EmptyClassName,
    #[error("class list is empty")]
    EmptyClassList,
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
}

/// A text prompt with exactly one `<CLASS>` placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PromptTemplate(String);

impl PromptTemplate {
    pub fn new(text: impl Into<String>) -> Result<Self, TemplateError> {
        Self::with_max_len(text, DEFAULT_MAX_TEMPLATE_CHARS)
    }

    pub fn with_max_len(text: impl Into<String>, max: usize) -> Result<Self, TemplateError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(TemplateError::Empty);
        }
        let count = text.matches(CLASS_TOKEN).count();
        if count != 1 {
            return Err(TemplateError::PlaceholderCount(count));
        }
        let len = text.chars().count();
        if len > max {
            return Err(TemplateError::TooLong { len, max });
        }
        Ok(Self(text))
    }

    pub fn anchor() -> Self {
        Self(ANCHOR_TEXT.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Case-folded, whitespace-collapsed form used for deduplication.
    pub fn normalized(&self) -> String {
        normalize_text(&self.0)
    }

    /// Replaces the placeholder with `class_name`.
    pub fn instantiate(&self, class_name: &str) -> Result<String, TemplateError> {
        if class_name.trim().is_empty() {
            return Err(TemplateError::EmptyClassName);
        }
        Ok(self.0.replacen(CLASS_TOKEN, class_name, 1))
    }
}

impl fmt::Display for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for PromptTemplate {
    type Error = TemplateError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<PromptTemplate> for String {
    fn from(value: PromptTemplate) -> Self {
        value.0
    }
}

/// Free-function form of [`PromptTemplate::instantiate`].
pub fn instantiate(template: &PromptTemplate, class_name: &str) -> Result<String, TemplateError> {
    template.instantiate(class_name)
}

pub fn normalize_text(text: &str) -> String {
    text.split_whitespace()
        .map(|w| w.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitRole {
    Base,
    Novel,
}

impl fmt::Display for SplitRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SplitRole::Base => f.write_str("base"),
            SplitRole::Novel => f.write_str("novel"),
        }
    }
}

/// Ordered, case-insensitively distinct class names for one split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassList {
    names: Vec<String>,
    role: SplitRole,
}

impl ClassList {
    pub fn new(names: Vec<String>, role: SplitRole) -> Result<Self, TemplateError> {
        if names.is_empty() {
            return Err(TemplateError::EmptyClassList);
        }
        let mut seen = HashSet::new();
        for name in &names {
            if name.trim().is_empty() {
                return Err(TemplateError::EmptyClassName);
            }
            if !seen.insert(name.to_lowercase()) {
                return Err(TemplateError::DuplicateClass(name.clone()));
            }
        }
        Ok(Self { names, role })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn role(&self) -> SplitRole {
        self.role
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }
}
