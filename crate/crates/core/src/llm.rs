//! Candidate generation through a chat-completion model.
//!
//! [`OpenAiChat`] talks to any OpenAI-compatible `/chat/completions` endpoint;
//! [`ScriptedLlm`] replays a fixed transcript for tests and offline runs.
//! [`propose`] owns retries and turns a raw reply into validated templates.

use std::collections::HashSet;
use std::fmt;
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metaprompt::MetaPrompt;
use crate::template::{PromptTemplate, CLASS_TOKEN, DEFAULT_MAX_TEMPLATE_CHARS};

pub const MAX_RETRIES_LIMIT: u32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("unexpected response body: {0}")]
    Decode(String),
    #[error("invalid LLM config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub request_timeout_secs: f64,
    pub max_retries: u32,
    /// Base of the exponential backoff between attempts.
    pub retry_backoff_secs: f64,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub max_template_chars: usize,
    pub verbose: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            endpoint_url: "https://api.openai.com/v1".into(),
            model_id: "gpt-3.5-turbo".into(),
            temperature: 1.0,
            max_output_tokens: 512,
            request_timeout_secs: 60.0,
            max_retries: 3,
            retry_backoff_secs: 1.0,
            api_key_env: Some("OPENAI_API_KEY".into()),
            max_template_chars: DEFAULT_MAX_TEMPLATE_CHARS,
            verbose: false,
        }
    }
}

impl LlmConfig {
    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(LlmError::Config(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::Config("max_output_tokens must be positive".into()));
        }
        if !(self.retry_backoff_secs.is_finite() && self.retry_backoff_secs >= 0.0) {
            return Err(LlmError::Config("retry_backoff_secs must be >= 0".into()));
        }
        Ok(())
    }

    pub fn backoff(&self, attempt: u32) -> Duration {
        Duration::from_secs_f64(self.retry_backoff_secs * 2f64.powi(attempt as i32))
    }
}

/// One single-turn completion. Implementations must be shareable across runs.
pub trait ChatBackend: Send + Sync {
    fn complete(&self, prompt: &str, config: &LlmConfig) -> Result<String, LlmError>;
}

#[derive(Debug, Serialize)]
pub struct ChatMessage<'a> {
    pub role: &'a str,
    pub content: &'a str,
}

#[derive(Debug, Serialize)]
pub struct ChatRequest<'a> {
    pub model: &'a str,
    pub messages: Vec<ChatMessage<'a>>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ResponseMessage,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// Blocking client for an OpenAI-compatible chat-completions endpoint.
pub struct OpenAiChat {
    agent: ureq::Agent,
    token: Option<String>,
}

impl fmt::Debug for OpenAiChat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OpenAiChat")
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl OpenAiChat {
    /// Reads the bearer token from `config.api_key_env` if that variable is set.
    pub fn from_config(config: &LlmConfig) -> Result<Self, LlmError> {
        config.validate()?;
        if config.endpoint_url.trim().is_empty() {
            return Err(LlmError::Config("endpoint_url is empty".into()));
        }
        let token = config.api_key_env.as_deref().and_then(|var| std::env::var(var).ok());
        Ok(Self::new(config, token))
    }

    pub fn new(config: &LlmConfig, token: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build();
        Self { agent, token }
    }
}

pub fn completions_url(endpoint_url: &str) -> String {
    format!("{}/chat/completions", endpoint_url.trim_end_matches('/'))
}

impl ChatBackend for OpenAiChat {
    fn complete(&self, prompt: &str, config: &LlmConfig) -> Result<String, LlmError> {
        let body = ChatRequest {
            model: &config.model_id,
            messages: vec![ChatMessage { role: "user", content: prompt }],
            temperature: config.temperature,
            max_tokens: config.max_output_tokens,
        };
        let mut request = self.agent.post(&completions_url(&config.endpoint_url));
        if let Some(token) = &self.token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        if config.verbose {
            log::debug!("llm request: {}", serde_json::to_string(&body).unwrap_or_default());
        }
        let response = match request.send_json(&body) {
            Ok(r) => r,
            Err(ureq::Error::Status(status, r)) => {
                let body = r.into_string().unwrap_or_default();
                return Err(LlmError::Http { status, body });
            }
            Err(ureq::Error::Transport(t)) => return Err(LlmError::Transport(t.to_string())),
        };
        let text = response.into_string().map_err(|e| LlmError::Transport(e.to_string()))?;
        if config.verbose {
            log::debug!("llm response: {text}");
        }
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Decode(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content.unwrap_or_default())
            .ok_or_else(|| LlmError::Decode("response has no choices".into()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedReply {
    Text(String),
    TransportError,
    Status(u16),
}

/// Deterministic transcript player. Records every prompt it receives.
#[derive(Debug)]
pub struct ScriptedLlm {
    replies: Vec<ScriptedReply>,
    cycle: bool,
    cursor: Mutex<usize>,
    received: Mutex<Vec<String>>,
}

impl ScriptedLlm {
    /// Plays `replies` in order and then repeats the last one.
    pub fn new(replies: Vec<ScriptedReply>) -> Self {
        Self { replies, cycle: false, cursor: Mutex::new(0), received: Mutex::new(Vec::new()) }
    }

    /// Plays `replies` in order, wrapping around at the end.
    pub fn cycling(replies: Vec<ScriptedReply>) -> Self {
        Self { cycle: true, ..Self::new(replies) }
    }

    pub fn from_texts<S: Into<String>>(texts: impl IntoIterator<Item = S>) -> Self {
        Self::new(texts.into_iter().map(|t| ScriptedReply::Text(t.into())).collect())
    }

    pub fn received(&self) -> Vec<String> {
        self.received.lock().unwrap().clone()
    }

    pub fn calls(&self) -> usize {
        self.received.lock().unwrap().len()
    }
}

impl ChatBackend for ScriptedLlm {
    fn complete(&self, prompt: &str, _config: &LlmConfig) -> Result<String, LlmError> {
        self.received.lock().unwrap().push(prompt.to_string());
        if self.replies.is_empty() {
            return Ok(String::new());
        }
        let mut cursor = self.cursor.lock().unwrap();
        let idx = if self.cycle { *cursor % self.replies.len() } else { (*cursor).min(self.replies.len() - 1) };
        *cursor += 1;
        match &self.replies[idx] {
            ScriptedReply::Text(t) => Ok(t.clone()),
            ScriptedReply::TransportError => Err(LlmError::Transport("scripted failure".into())),
            ScriptedReply::Status(status) => {
                Err(LlmError::Http { status: *status, body: "scripted".into() })
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateSet {
    pub templates: Vec<PromptTemplate>,
    pub raw_response: String,
    pub rejected: Vec<(String, String)>,
    /// Requests sent, including the first.
    pub attempts: u32,
    /// Every attempt came back without a usable template.
    pub exhausted: bool,
}

impl CandidateSet {
    pub fn retries(&self) -> u32 {
        self.attempts.saturating_sub(1)
    }
}

/// Extracts candidate prompts: outermost `[...]` groups containing `<CLASS>`,
/// or, when there are none, nonempty lines containing `<CLASS>`.
pub fn parse_candidates(raw: &str) -> Vec<String> {
    let mut found = bracketed(raw);
    if found.is_empty() {
        found = raw
            .lines()
            .map(strip_list_marker)
            .filter(|l| l.contains(CLASS_TOKEN))
            .map(str::to_string)
            .collect();
    }
    let mut seen = HashSet::new();
    found.retain(|c| !c.is_empty() && seen.insert(c.clone()));
    found
}

fn bracketed(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in raw.char_indices() {
        match ch {
            '[' => {
                if depth == 0 {
                    start = i + 1;
                }
                depth += 1;
            }
            ']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    let inner = raw[start..i].trim();
                    if inner.contains(CLASS_TOKEN) {
                        out.push(inner.to_string());
                    }
                }
            }
            _ => {}
        }
    }
    out
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim();
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    let rest = &line[digits..];
    let rest = if digits > 0 {
        rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')).unwrap_or(line)
    } else {
        rest.strip_prefix("- ").or_else(|| rest.strip_prefix("* ")).unwrap_or(rest)
    };
    rest.trim()
}

fn validate_candidates(raw: &str, n: usize, max_chars: usize) -> (Vec<PromptTemplate>, Vec<(String, String)>) {
    let mut accepted = Vec::new();
    let mut rejected = Vec::new();
    for text in parse_candidates(raw) {
        if accepted.len() == n {
            break;
        }
        match PromptTemplate::with_max_len(text.clone(), max_chars) {
            Ok(t) => accepted.push(t),
            Err(e) => rejected.push((text, e.to_string())),
        }
    }
    (accepted, rejected)
}

/// Sends the meta-prompt as one user message and returns up to `n` valid templates.
///
/// Transport failures, non-success statuses and replies without a single valid
/// template all consume an attempt; at most `max_retries` extra requests are made.
/// A run of empty replies ends in an empty set with `exhausted` set; a failing
/// final request is returned as an error.
pub fn propose(
    backend: &dyn ChatBackend,
    meta: &MetaPrompt,
    n: usize,
    config: &LlmConfig,
) -> Result<CandidateSet, LlmError> {
    if n == 0 {
        return Err(LlmError::Config("candidate count must be at least 1".into()));
    }
    config.validate()?;
    let prompt = meta.full_text();
    let mut last = CandidateSet {
        templates: Vec::new(),
        raw_response: String::new(),
        rejected: Vec::new(),
        attempts: 0,
        exhausted: true,
    };
    for attempt in 0..=config.max_retries {
        if attempt > 0 {
            let wait = config.backoff(attempt - 1);
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
        last.attempts = attempt + 1;
        match backend.complete(&prompt, config) {
            Ok(raw) => {
                let (templates, rejected) =
                    validate_candidates(&raw, n, config.max_template_chars);
                last.raw_response = raw;
                last.rejected = rejected;
                if !templates.is_empty() {
                    last.templates = templates;
                    last.exhausted = false;
                    return Ok(last);
                }
                log::warn!("attempt {}: no valid candidates in reply", attempt + 1);
            }
            Err(e) if attempt == config.max_retries => return Err(e),
            Err(e) => log::warn!("attempt {}: {e}", attempt + 1),
        }
    }
    Ok(last)
}
