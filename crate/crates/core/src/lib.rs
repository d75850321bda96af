//! Black-box optimization of prompt templates for vision-language classifiers,
//! with a chat-completion LLM acting as the optimizer.
//!
//! The loop keeps an episodic memory of scored prompts, shows the best of them
//! to the LLM inside a meta-prompt, scores whatever the LLM proposes on the
//! base classes and repeats. Scoring backends only provide cosine-similarity
//! matrices; loss and accuracy are always computed by [`scoring`].
//!
//! | module | role |
//! |---|---|
//! | [`template`] | `<CLASS>` prompt templates and class lists |
//! | [`scoring`] | softmax, cross-entropy, top-1 accuracy, harmonic mean |
//! | [`memory`] | scored prompt store with top-k retrieval and the anchor prompt |
//! | [`metaprompt`] | meta-prompt rendering under a token budget |
//! | [`llm`] | OpenAI-compatible client, scripted mock, candidate parsing |
//! | [`evaluator`] | synthetic oracle and remote scorer-service client |
//! | [`optimizer`] | the optimization loop and run history |
//! | [`occlusion`] | word-removal sensitivity tables |
//! | [`descriptions`] | image-description ingestion |
//! | [`cli`] | config files and the `promptopt` commands |
//!
//! Runnable walkthroughs live in `examples/`.

pub mod cli;
pub mod descriptions;
pub mod evaluator;
pub mod llm;
pub mod memory;
pub mod metaprompt;
pub mod occlusion;
pub mod optimizer;
pub mod scoring;
pub mod template;

pub use evaluator::{Evaluator, SplitSpec, SyntheticEvaluator, SyntheticWorld};
pub use llm::{ChatBackend, LlmConfig, OpenAiChat, ScriptedLlm};
pub use memory::{MemoryState, Origin, PromptRecord};
pub use optimizer::{Optimizer, RunConfig, RunResult, StopReason};
pub use scoring::{EvalScores, SplitMetrics};
pub use template::{ClassList, PromptTemplate, SplitRole};
