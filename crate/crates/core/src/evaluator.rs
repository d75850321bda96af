//! Scoring backends behind one interface: `(template, split) -> EvalScores`.
//!
//! [`SyntheticEvaluator`] is a closed-form stand-in for CLIP whose similarity
//! for the true class grows with the number of "gold" words in the template.
//! [`RemoteEvaluator`] fetches real similarity matrices from the scorer
//! service. Both hand their matrices to [`evaluate_matrix`], so loss and
//! accuracy come out of a single implementation.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scoring::{evaluate_matrix, EvalScores, LabelVector, ScoringConfig, ScoringError, SimilarityMatrix};
use crate::template::{ClassList, PromptTemplate, SplitRole, TemplateError, CLASS_TOKEN};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unknown split {dataset_id}/{role}")]
    UnknownSplit { dataset_id: String, role: SplitRole },
    #[error("requested {shots} shots but the split only has {available} images per class")]
    NotEnoughShots { shots: usize, available: usize },
    #[error("invalid synthetic world: {0}")]
    InvalidWorld(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error(transparent)]
    Scoring(#[from] ScoringError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SplitSpec {
    pub dataset_id: String,
    pub role: SplitRole,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_shots() -> usize {
    1
}

impl SplitSpec {
    pub fn new(dataset_id: impl Into<String>, role: SplitRole, shots: usize) -> Self {
        Self { dataset_id: dataset_id.into(), role, shots }
    }

    pub fn base(dataset_id: impl Into<String>) -> Self {
        Self::new(dataset_id, SplitRole::Base, 1)
    }

    pub fn novel(dataset_id: impl Into<String>) -> Self {
        Self::new(dataset_id, SplitRole::Novel, 1)
    }

    pub fn with_shots(mut self, shots: usize) -> Self {
        self.shots = shots;
        self
    }
}

/// Deterministic scorer. Must be callable from several threads at once.
pub trait Evaluator: Send + Sync {
    fn score(&self, template: &PromptTemplate, split: &SplitSpec) -> Result<EvalScores, EvalError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldWord {
    pub word: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticWorld {
    pub seed: u64,
    pub classes: ClassList,
    pub gold_keywords: Vec<GoldWord>,
    pub images_per_class: usize,
    pub noise_amplitude: f64,
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |m: String| Err(EvalError::InvalidWorld(m));
        if self.gold_keywords.is_empty() {
            return bad("at least one gold keyword is required".into());
        }
        if self.classes.len() < 2 {
            return bad("at least two classes are required".into());
        }
        if self.images_per_class == 0 {
            return bad("images_per_class must be positive".into());
        }
        let mut seen = BTreeSet::new();
        for g in &self.gold_keywords {
            if !(g.weight.is_finite() && g.weight > 0.0) {
                return bad(format!("weight of {:?} must be positive", g.word));
            }
            let words = words(&g.word);
            if words.len() != 1 || !seen.insert(words[0].clone()) {
                return bad(format!("gold keyword {:?} must be a single distinct word", g.word));
            }
        }
        let min = self.min_weight();
        if !(self.noise_amplitude >= 0.0 && self.noise_amplitude < min / 2.0) {
            return bad(format!(
                "noise {} must lie in [0, {}) (half the smallest gold weight)",
                self.noise_amplitude,
                min / 2.0
            ));
        }
        Ok(())
    }

    pub fn min_weight(&self) -> f64 {
        self.gold_keywords.iter().map(|g| g.weight).fold(f64::INFINITY, f64::min)
    }

    /// Sum of gold weights for the distinct gold words in `template`.
    pub fn signal(&self, template: &PromptTemplate) -> f64 {
        let present: BTreeSet<String> = template_words(template).into_iter().collect();
        self.gold_keywords
            .iter()
            .filter(|g| present.contains(&g.word.to_lowercase()))
            .map(|g| g.weight)
            .sum()
    }

    /// Noise term for image `i`, class column `j`, uniform on `[-ν, ν]`.
    pub fn noise(&self, image: usize, class: usize) -> f64 {
        let h = mix64(mix64(mix64(self.seed) ^ image as u64) ^ (class as u64).wrapping_mul(0xA24B_AED4_963E_E407));
        let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
        (2.0 * unit - 1.0) * self.noise_amplitude
    }
}

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Case-folded words of the template with the placeholder removed.
pub fn template_words(template: &PromptTemplate) -> Vec<String> {
    words(&template.as_str().replace(CLASS_TOKEN, " "))
}

/// Closed-form similarities: the true-class column carries the gold signal,
/// every column carries seeded noise, entries are clamped to `[-1, 1]`.
/// Rows are grouped by class; the first `shots` images of each class are used.
pub fn synthetic_similarities(
    world: &SyntheticWorld,
    template: &PromptTemplate,
    shots: usize,
) -> Result<(SimilarityMatrix, LabelVector), EvalError> {
    world.validate()?;
    if shots == 0 || shots > world.images_per_class {
        return Err(EvalError::NotEnoughShots { shots, available: world.images_per_class });
    }
    let k = world.classes.len();
    let signal = world.signal(template);
    let mut values = Vec::with_capacity(k * shots * k);
    let mut labels = Vec::with_capacity(k * shots);
    for class in 0..k {
        for m in 0..shots {
            let image = class * world.images_per_class + m;
            for j in 0..k {
                let base = if j == class { signal } else { 0.0 };
                values.push((base + world.noise(image, j)).clamp(-1.0, 1.0));
            }
            labels.push(class);
        }
    }
    let sim = SimilarityMatrix::from_row_major(k * shots, k, values)?;
    Ok((sim, LabelVector::new(labels)))
}

/// Synthetic backend for one dataset with a base world and a novel world.
#[derive(Debug)]
pub struct SyntheticEvaluator {
    dataset_id: String,
    base: SyntheticWorld,
    novel: SyntheticWorld,
    base_calls: AtomicUsize,
    novel_calls: AtomicUsize,
}

impl SyntheticEvaluator {
    pub fn new(
        dataset_id: impl Into<String>,
        base: SyntheticWorld,
        novel: SyntheticWorld,
    ) -> Result<Self, EvalError> {
        base.validate()?;
        novel.validate()?;
        Ok(Self {
            dataset_id: dataset_id.into(),
            base,
            novel,
            base_calls: AtomicUsize::new(0),
            novel_calls: AtomicUsize::new(0),
        })
    }

    pub fn world(&self, role: SplitRole) -> &SyntheticWorld {
        match role {
            SplitRole::Base => &self.base,
            SplitRole::Novel => &self.novel,
        }
    }

    pub fn calls(&self, role: SplitRole) -> usize {
        match role {
            SplitRole::Base => self.base_calls.load(Ordering::SeqCst),
            SplitRole::Novel => self.novel_calls.load(Ordering::SeqCst),
        }
    }
}

/// Synthetic worlds use a fixed softmax temperature of 1.
pub const SYNTHETIC_TEMPERATURE: f64 = 1.0;

impl Evaluator for SyntheticEvaluator {
    fn score(&self, template: &PromptTemplate, split: &SplitSpec) -> Result<EvalScores, EvalError> {
        if split.dataset_id != self.dataset_id {
            return Err(EvalError::UnknownSplit {
                dataset_id: split.dataset_id.clone(),
                role: split.role,
            });
        }
        match split.role {
            SplitRole::Base => self.base_calls.fetch_add(1, Ordering::SeqCst),
            SplitRole::Novel => self.novel_calls.fetch_add(1, Ordering::SeqCst),
        };
        let (sim, labels) = synthetic_similarities(self.world(split.role), template, split.shots)?;
        Ok(evaluate_matrix(&sim, &labels, ScoringConfig::new(SYNTHETIC_TEMPERATURE)?)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HealthStatus {
    pub status: String,
    pub model_id: String,
    #[serde(default)]
    pub datasets: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitsResponse {
    pub base: Vec<String>,
    pub novel: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub dataset_id: String,
    pub role: SplitRole,
    pub shots: usize,
    pub prompts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    /// Row-major N×K.
    pub similarities: Vec<f64>,
    pub labels: Vec<usize>,
    pub temperature: f64,
    pub n: usize,
    pub k: usize,
}

/// Float32 slack allowed on normalized dot products before rejecting a matrix.
const SIMILARITY_SLACK: f64 = 1e-6;

impl ScoreResponse {
    /// Checks the payload against the request and builds the matrix.
    pub fn into_matrix(
        self,
        expected_k: usize,
    ) -> Result<(SimilarityMatrix, LabelVector, ScoringConfig), EvalError> {
        let schema = |m: String| Err(EvalError::Schema(m));
        if self.k != expected_k {
            return schema(format!("response has {} columns for {} prompts", self.k, expected_k));
        }
        if self.similarities.len() != self.n * self.k {
            return schema(format!(
                "{} similarities for a {}x{} matrix",
                self.similarities.len(),
                self.n,
                self.k
            ));
        }
        if self.labels.len() != self.n {
            return schema(format!("{} labels for {} rows", self.labels.len(), self.n));
        }
        let mut values = self.similarities;
        for (idx, v) in values.iter_mut().enumerate() {
            if !(v.is_finite() && v.abs() <= 1.0 + SIMILARITY_SLACK) {
                return schema(format!("similarity {v} at index {idx} is outside [-1, 1]"));
            }
            *v = v.clamp(-1.0, 1.0);
        }
        let tau = ScoringConfig::new(self.temperature)
            .map_err(|e| EvalError::Schema(e.to_string()))?;
        let sim = SimilarityMatrix::from_row_major(self.n, self.k, values)
            .map_err(|e| EvalError::Schema(e.to_string()))?;
        Ok((sim, LabelVector::new(self.labels), tau))
    }
}

/// Client for the CLIP scorer service. Similarities are fetched remotely,
/// scores are computed locally.
pub struct RemoteEvaluator {
    service_url: String,
    agent: ureq::Agent,
    max_retries: u32,
    retry_backoff: Duration,
    splits: Mutex<HashMap<String, SplitsResponse>>,
}

impl RemoteEvaluator {
    pub fn new(service_url: impl Into<String>, timeout: Duration, max_retries: u32, retry_backoff: Duration) -> Self {
        Self {
            service_url: service_url.into().trim_end_matches('/').to_string(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            max_retries,
            retry_backoff,
            splits: Mutex::new(HashMap::new()),
        }
    }

    fn with_retries<T>(&self, mut call: impl FnMut() -> Result<T, EvalError>) -> Result<T, EvalError> {
        let mut attempt = 0;
        loop {
            match call() {
                Err(e) if attempt < self.max_retries && is_retryable(&e) => {
                    log::warn!("scorer request failed ({e}), retrying");
                    thread::sleep(self.retry_backoff * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, url: &str) -> Result<T, EvalError> {
        self.with_retries(|| {
            let response = self.agent.get(url).call().map_err(map_ureq)?;
            response.into_json::<T>().map_err(|e| EvalError::Schema(e.to_string()))
        })
    }

    pub fn health(&self) -> Result<HealthStatus, EvalError> {
        self.get_json(&format!("{}/health", self.service_url))
    }

    pub fn class_names(&self, dataset_id: &str, role: SplitRole) -> Result<ClassList, EvalError> {
        let cached = self.splits.lock().unwrap().get(dataset_id).cloned();
        let splits = match cached {
            Some(s) => s,
            None => {
                let url = format!("{}/splits", self.service_url);
                let fetched: SplitsResponse = self.with_retries(|| {
                    let response = self
                        .agent
                        .get(&url)
                        .query("dataset_id", dataset_id)
                        .call()
                        .map_err(map_ureq)?;
                    response.into_json().map_err(|e| EvalError::Schema(e.to_string()))
                })?;
                self.splits.lock().unwrap().insert(dataset_id.to_string(), fetched.clone());
                fetched
            }
        };
        let names = match role {
            SplitRole::Base => splits.base,
            SplitRole::Novel => splits.novel,
        };
        Ok(ClassList::new(names, role)?)
    }

    pub fn fetch(&self, request: &ScoreRequest) -> Result<ScoreResponse, EvalError> {
        let url = format!("{}/score", self.service_url);
        self.with_retries(|| {
            let response = self.agent.post(&url).send_json(request).map_err(map_ureq)?;
            response.into_json().map_err(|e| EvalError::Schema(e.to_string()))
        })
    }

    pub fn remote_score(&self, template: &PromptTemplate, split: &SplitSpec) -> Result<EvalScores, EvalError> {
        let unknown = |e: EvalError| match e {
            EvalError::Http { status: 404, .. } => EvalError::UnknownSplit {
                dataset_id: split.dataset_id.clone(),
                role: split.role,
            },
            other => other,
        };
        let classes = self.class_names(&split.dataset_id, split.role).map_err(unknown)?;
        let prompts = classes
            .names()
            .iter()
            .map(|c| template.instantiate(c))
            .collect::<Result<Vec<_>, _>>()?;
        let request = ScoreRequest {
            dataset_id: split.dataset_id.clone(),
            role: split.role,
            shots: split.shots,
            prompts,
        };
        let response = self.fetch(&request).map_err(unknown)?;
        let (sim, labels, tau) = response.into_matrix(classes.len())?;
        evaluate_matrix(&sim, &labels, tau).map_err(|e| EvalError::Schema(e.to_string()))
    }
}

impl Evaluator for RemoteEvaluator {
    fn score(&self, template: &PromptTemplate, split: &SplitSpec) -> Result<EvalScores, EvalError> {
        self.remote_score(template, split)
    }
}

fn is_retryable(e: &EvalError) -> bool {
    matches!(e, EvalError::Transport(_)) || matches!(e, EvalError::Http { status, .. } if *status >= 500)
}

fn map_ureq(e: ureq::Error) -> EvalError {
    match e {
        ureq::Error::Status(status, r) => EvalError::Http { status, body: r.into_string().unwrap_or_default() },
        ureq::Error::Transport(t) => EvalError::Transport(t.to_string()),
    }
}
