//! Command-line surface: config files, backend wiring, persistence and reports.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 backend or transport failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::descriptions::{self, DescriptionSet, LoadOptions};
use crate::evaluator::{EvalError, Evaluator, GoldWord, RemoteEvaluator, SplitSpec, SyntheticEvaluator, SyntheticWorld};
use crate::llm::{ChatBackend, LlmConfig, OpenAiChat, ScriptedLlm, ScriptedReply};
use crate::metaprompt::MetaPromptConfig;
use crate::occlusion::{self, OcclusionMode, OcclusionPolicy, Segmentation, DEFAULT_MAX_VARIANTS};
use crate::optimizer::{Optimizer, RunConfig, RunResult, StepEntry};
use crate::scoring::harmonic_mean;
use crate::template::{ClassList, PromptTemplate, SplitRole};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Transport(_) | EvalError::Http { .. } | EvalError::Schema(_) => CliError::Backend(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub max_steps: Option<usize>,
    pub candidates_per_step: Option<usize>,
    pub memory_k: Option<usize>,
    pub patience: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum LlmBackendConfig {
    Openai {
        #[serde(flatten)]
        config: LlmConfig,
    },
    Scripted {
        script: Vec<ScriptedReply>,
        #[serde(default)]
        cycle: bool,
        #[serde(flatten)]
        config: LlmConfig,
    },
}

impl LlmBackendConfig {
    fn config(&self) -> &LlmConfig {
        match self {
            LlmBackendConfig::Openai { config } | LlmBackendConfig::Scripted { config, .. } => config,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct MetaSection {
    #[serde(flatten)]
    pub meta: MetaPromptConfig,
    pub instruction_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum EvaluatorConfig {
    Synthetic {
        seed: u64,
        base_classes: Vec<String>,
        novel_classes: Vec<String>,
        gold_keywords: Vec<GoldWord>,
        images_per_class: usize,
        #[serde(default)]
        noise_amplitude: f64,
    },
    Remote {
        service_url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: f64,
        #[serde(default = "default_retries")]
        max_retries: u32,
        #[serde(default = "default_backoff")]
        retry_backoff_secs: f64,
    },
}

fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub dataset_id: String,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_shots() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescriptionSection {
    pub path: PathBuf,
    #[serde(default)]
    pub keep_violations: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: PathBuf::from("runs") }
    }
}

/// The single JSON config file read by every command.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliConfig {
    #[serde(default)]
    pub run: RunSection,
    pub llm: LlmBackendConfig,
    #[serde(default)]
    pub meta: MetaSection,
    pub evaluator: EvaluatorConfig,
    pub split: SplitSection,
    #[serde(default)]
    pub descriptions: Option<DescriptionSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Replaces `${NAME}` inside every string with the environment variable.
pub fn interpolate_env(value: &mut Value) -> Result<(), CliError> {
    match value {
        Value::String(s) => {
            let mut out = String::new();
            let mut rest = s.as_str();
            while let Some(start) = rest.find("${") {
                out.push_str(&rest[..start]);
                let tail = &rest[start + 2..];
                let end = tail.find('}').ok_or_else(|| config_err(format!("unterminated ${{ in {s:?}")))?;
                let name = &tail[..end];
                let val = std::env::var(name)
                    .map_err(|_| config_err(format!("environment variable {name} is not set")))?;
                out.push_str(&val);
                rest = &tail[end + 1..];
            }
            out.push_str(rest);
            *s = out;
        }
        Value::Array(items) => items.iter_mut().try_for_each(interpolate_env)?,
        Value::Object(map) => map.values_mut().try_for_each(interpolate_env)?,
        _ => {}
    }
    Ok(())
}

/// Applies `dotted.path=value`; the value is parsed as JSON, else taken as a string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), CliError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override {assignment:?} is not of the form key=value")))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, key) in keys.iter().enumerate() {
        if key.is_empty() {
            return Err(config_err(format!("override path {path:?} has an empty segment")));
        }
        let map = node
            .as_object_mut()
            .ok_or_else(|| config_err(format!("override path {path:?}: {key:?} is not inside an object")))?;
        if i == keys.len() - 1 {
            map.insert(key.to_string(), parsed);
            return Ok(());
        }
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields a segment")
}

impl CliConfig {
    pub fn load(path: &Path, overrides: &[String]) -> Result<(Self, PathBuf), CliError> {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value =
            serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        interpolate_env(&mut value)?;
        let config: CliConfig =
            serde_json::from_value(value).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base_dir))
    }

    pub fn base_split(&self) -> SplitSpec {
        SplitSpec::new(&self.split.dataset_id, SplitRole::Base, self.split.shots)
    }

    pub fn novel_split(&self) -> SplitSpec {
        SplitSpec::new(&self.split.dataset_id, SplitRole::Novel, self.split.shots)
    }

    pub fn run_config(&self, base_dir: &Path) -> Result<RunConfig, CliError> {
        let mut meta = self.meta.meta.clone();
        if let Some(p) = &self.meta.instruction_path {
            let p = resolve(base_dir, p);
            meta.instruction = Some(
                fs::read_to_string(&p).map_err(|e| config_err(format!("instruction file {}: {e}", p.display())))?,
            );
        }
        let mut rc = RunConfig::new(self.base_split(), self.novel_split());
        if let Some(v) = self.run.max_steps {
            rc.max_steps = v;
        }
        if let Some(v) = self.run.candidates_per_step {
            rc.candidates_per_step = v;
        }
        if let Some(v) = self.run.memory_k {
            rc.memory_k = v;
        }
        if let Some(v) = self.run.patience {
            rc.patience = v;
        }
        rc.seed = self.run.seed;
        rc.llm = self.llm.config().clone();
        rc.meta = meta;
        rc.evaluator = serde_json::to_value(&self.evaluator).expect("evaluator config serializes");
        rc.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(rc)
    }

    pub fn evaluator(&self) -> Result<Box<dyn Evaluator>, CliError> {
        match &self.evaluator {
            EvaluatorConfig::Synthetic { seed, base_classes, novel_classes, gold_keywords, images_per_class, noise_amplitude } => {
                let world = |names: &[String], role, seed| -> Result<SyntheticWorld, CliError> {
                    Ok(SyntheticWorld {
                        seed,
                        classes: ClassList::new(names.to_vec(), role).map_err(|e| config_err(format!("evaluator classes: {e}")))?,
                        gold_keywords: gold_keywords.clone(),
                        images_per_class: *images_per_class,
                        noise_amplitude: *noise_amplitude,
                    })
                };
                let base = world(base_classes, SplitRole::Base, *seed)?;
                let novel = world(novel_classes, SplitRole::Novel, seed.wrapping_add(1))?;
                let ev = SyntheticEvaluator::new(&self.split.dataset_id, base, novel)
                    .map_err(|e| config_err(format!("evaluator: {e}")))?;
                Ok(Box::new(ev))
            }
            EvaluatorConfig::Remote { service_url, timeout_secs, max_retries, retry_backoff_secs } => {
                let ev = RemoteEvaluator::new(
                    service_url,
                    Duration::from_secs_f64(*timeout_secs),
                    *max_retries,
                    Duration::from_secs_f64(*retry_backoff_secs),
                );
                ev.health()?;
                Ok(Box::new(ev))
            }
        }
    }

    pub fn llm_backend(&self) -> Result<Box<dyn ChatBackend>, CliError> {
        match &self.llm {
            LlmBackendConfig::Openai { config } => {
                Ok(Box::new(OpenAiChat::from_config(config).map_err(|e| config_err(e.to_string()))?))
            }
            LlmBackendConfig::Scripted { script, cycle, .. } => Ok(Box::new(if *cycle {
                ScriptedLlm::cycling(script.clone())
            } else {
                ScriptedLlm::new(script.clone())
            })),
        }
    }

    pub fn load_descriptions(&self, base_dir: &Path) -> Result<DescriptionSet, CliError> {
        let Some(section) = &self.descriptions else {
            return Ok(DescriptionSet::new());
        };
        let classes = match &self.evaluator {
            EvaluatorConfig::Synthetic { base_classes, .. } => ClassList::new(base_classes.clone(), SplitRole::Base)
                .map_err(|e| config_err(e.to_string()))?,
            EvaluatorConfig::Remote { service_url, timeout_secs, .. } => {
                RemoteEvaluator::new(service_url, Duration::from_secs_f64(*timeout_secs), 0, Duration::ZERO)
                    .class_names(&self.split.dataset_id, SplitRole::Base)?
            }
        };
        let options = LoadOptions { keep_violations: section.keep_violations, ..Default::default() };
        let loaded = descriptions::load(resolve(base_dir, &section.path), &self.split.dataset_id, &classes, options)
            .map_err(|e| config_err(format!("descriptions: {e}")))?;
        Ok(loaded.set)
    }

    pub fn output_dir(&self, base_dir: &Path) -> PathBuf {
        resolve(base_dir, &self.output.dir)
    }
}

fn resolve(base_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| config_err(format!("cannot create {}: {e}", dir.display())))
}

pub fn history_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.history.jsonl"))
}

pub fn result_path(dir: &Path, run_id: &str) -> PathBuf {
    dir.join(format!("{run_id}.result.json"))
}

pub fn cmd_optimize(config_path: &Path, overrides: &[String]) -> Result<RunResult, CliError> {
    let (config, base_dir) = CliConfig::load(config_path, overrides)?;
    let run_config = config.run_config(&base_dir)?;
    let descriptions = config.load_descriptions(&base_dir)?;
    let evaluator = config.evaluator()?;
    let llm = config.llm_backend()?;
    let out_dir = config.output_dir(&base_dir);
    create_dir(&out_dir)?;

    let run_id = run_config.run_id();
    let hpath = history_path(&out_dir, &run_id);
    let file = File::create(&hpath).map_err(|e| config_err(format!("{}: {e}", hpath.display())))?;
    let mut writer = BufWriter::new(file);
    let optimizer = Optimizer::new(run_config, evaluator.as_ref(), llm.as_ref())
        .map_err(|e| config_err(e.to_string()))?
        .with_descriptions(descriptions);
    let result = optimizer.run_with_history(&mut writer).map_err(|e| {
        if e.is_backend() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Config(e.to_string())
        }
    })?;
    writer.flush().map_err(|e| CliError::Backend(e.to_string()))?;

    let rpath = result_path(&out_dir, &run_id);
    let json = serde_json::to_string_pretty(&result).expect("result serializes");
    fs::write(&rpath, json + "\n").map_err(|e| config_err(format!("{}: {e}", rpath.display())))?;
    println!("run {run_id}: {:?} after {} steps", result.stop_reason, result.steps);
    println!("best prompt: {}", result.best.template);
    println!(
        "base {:.2}  novel {:.2}  H {:.2}",
        result.metrics.base, result.metrics.novel, result.metrics.h
    );
    println!("history: {}", hpath.display());
    println!("result: {}", rpath.display());
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Windows,
    Subsets,
}

pub struct OccludeArgs<'a> {
    pub prompt: &'a str,
    pub mode: ModeArg,
    pub max_variants: usize,
    pub phrases: &'a [String],
    pub variants: &'a [String],
}

pub fn cmd_occlude(config_path: &Path, overrides: &[String], args: &OccludeArgs<'_>) -> Result<occlusion::OcclusionTable, CliError> {
    let (config, base_dir) = CliConfig::load(config_path, overrides)?;
    let template = PromptTemplate::new(args.prompt).map_err(|e| config_err(format!("prompt: {e}")))?;
    let policy = OcclusionPolicy {
        mode: match args.mode {
            ModeArg::Windows => OcclusionMode::Windows,
            ModeArg::Subsets => OcclusionMode::Subsets,
        },
        max_variants: args.max_variants,
        segmentation: if args.phrases.is_empty() {
            Segmentation::Word
        } else {
            Segmentation::UserPhrases(args.phrases.to_vec())
        },
    };
    let mut list = occlusion::variants(&template, &policy).map_err(|e| config_err(e.to_string()))?;
    for extra in args.variants {
        let v = PromptTemplate::new(extra.as_str()).map_err(|e| config_err(format!("variant {extra:?}: {e}")))?;
        if !list.iter().any(|x| x.normalized() == v.normalized()) {
            list.push(v);
        }
    }
    let evaluator = config.evaluator()?;
    let table = occlusion::analyze_variants(&template, &list, evaluator.as_ref(), &config.base_split(), &config.novel_split());

    let out_dir = config.output_dir(&base_dir);
    create_dir(&out_dir)?;
    let write_err = |e: occlusion::OcclusionError| config_err(e.to_string());
    let csv_file = File::create(out_dir.join("occlusion.csv")).map_err(|e| config_err(e.to_string()))?;
    table.write_csv(csv_file).map_err(write_err)?;
    let json_file = File::create(out_dir.join("occlusion.json")).map_err(|e| config_err(e.to_string()))?;
    table.write_json(json_file).map_err(write_err)?;

    for row in &table.rows {
        match (&row.metrics, &row.error) {
            (Some(m), _) => println!(
                "{}{:<60} base {:6.2}  novel {:6.2}  H {:6.2}",
                if row.is_original { "* " } else { "  " },
                row.variant.as_str(),
                m.base,
                m.novel,
                m.h
            ),
            (None, err) => println!("  {:<60} error: {}", row.variant.as_str(), err.as_deref().unwrap_or("?")),
        }
    }
    if let Some(failed) = table.rows.iter().find(|r| r.error.is_some()) {
        return Err(CliError::Backend(format!(
            "scoring failed for {:?}: {}",
            failed.variant.as_str(),
            failed.error.as_deref().unwrap_or_default()
        )));
    }
    Ok(table)
}

pub fn cmd_score(config_path: &Path, overrides: &[String], prompt: &str) -> Result<(), CliError> {
    let (config, _) = CliConfig::load(config_path, overrides)?;
    let template = PromptTemplate::new(prompt).map_err(|e| config_err(format!("prompt: {e}")))?;
    let evaluator = config.evaluator()?;
    let base = evaluator.score(&template, &config.base_split())?;
    let novel = evaluator.score(&template, &config.novel_split())?;
    let h = harmonic_mean(base.accuracy, novel.accuracy).map_err(|e| config_err(e.to_string()))?;
    let out = serde_json::json!({
        "prompt": template.as_str(),
        "base": base,
        "novel": novel,
        "h": h,
    });
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_id: String,
    pub prompt: String,
    pub base: f64,
    pub novel: f64,
    pub h: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    /// `(run_id, step)` curve points.
    pub curves: Vec<(String, StepEntry)>,
    pub table: Vec<ReportRow>,
}

#[derive(Deserialize)]
struct FinalLine {
    run_id: String,
    best: crate::memory::PromptRecord,
    metrics: MetricsIn,
}

#[derive(Deserialize)]
struct MetricsIn {
    base: f64,
    novel: f64,
}

fn table_row(line: FinalLine) -> Result<ReportRow, String> {
    let h = harmonic_mean(line.metrics.base, line.metrics.novel).map_err(|e| e.to_string())?;
    Ok(ReportRow {
        run_id: line.run_id,
        prompt: line.best.template.to_string(),
        base: line.metrics.base,
        novel: line.metrics.novel,
        h,
    })
}

/// Reads run histories (`*.history.jsonl`) and result files (`*.result.json`).
pub fn build_report(paths: &[PathBuf]) -> Result<Report, CliError> {
    let mut report = Report::default();
    let mut rows: BTreeMap<String, ReportRow> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut add_row = |row: ReportRow| {
        if !rows.contains_key(&row.run_id) {
            order.push(row.run_id.clone());
            rows.insert(row.run_id.clone(), row);
        }
    };
    for path in paths {
        let text = fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let bad = |line: usize, msg: String| config_err(format!("{}:{line}: {msg}", path.display()));
        let first: Value = text
            .lines()
            .next()
            .and_then(|l| serde_json::from_str(l).ok())
            .unwrap_or(Value::Null);
        if first.get("kind").and_then(Value::as_str) == Some("header") {
            let run_id = first["run_id"].as_str().ok_or_else(|| bad(1, "header has no run_id".into()))?.to_string();
            for (idx, line) in text.lines().enumerate().skip(1) {
                let value: Value = serde_json::from_str(line).map_err(|e| bad(idx + 1, e.to_string()))?;
                match value.get("kind").and_then(Value::as_str) {
                    Some("step") => {
                        let entry: StepEntry = serde_json::from_value(value).map_err(|e| bad(idx + 1, e.to_string()))?;
                        report.curves.push((run_id.clone(), entry));
                    }
                    Some("final") => {
                        let fin: FinalLine = serde_json::from_value(value).map_err(|e| bad(idx + 1, e.to_string()))?;
                        add_row(table_row(fin).map_err(|e| bad(idx + 1, e))?);
                    }
                    Some("error") => {}
                    other => return Err(bad(idx + 1, format!("unexpected line kind {other:?}"))),
                }
            }
        } else {
            let fin: FinalLine = serde_json::from_str(&text).map_err(|e| bad(1, format!("not a history or result file: {e}")))?;
            add_row(table_row(fin).map_err(|e| bad(1, e))?);
        }
    }
    report.table = order.into_iter().map(|id| rows.remove(&id).expect("row recorded")).collect();
    Ok(report)
}

fn opt(v: Option<f64>, digits: usize) -> String {
    v.map(|x| format!("{x:.digits$}")).unwrap_or_default()
}

impl Report {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("run_id,step,mean_loss,std_loss,mean_accuracy,std_accuracy,best_so_far_accuracy\n");
        for (run_id, e) in &self.curves {
            let _ = writeln!(
                out,
                "{run_id},{},{},{},{},{},{:.2}",
                e.step,
                opt(e.mean_loss, 4),
                opt(e.std_loss, 4),
                opt(e.mean_accuracy, 2),
                opt(e.std_accuracy, 2),
                e.best_so_far_accuracy
            );
        }
        out
    }

    pub fn table_csv(&self) -> Result<String, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| config_err(e.to_string());
        w.write_record(["run_id", "prompt", "base", "novel", "H"]).map_err(csv_err)?;
        for r in &self.table {
            w.write_record([
                r.run_id.clone(),
                r.prompt.clone(),
                format!("{:.2}", r.base),
                format!("{:.2}", r.novel),
                format!("{:.2}", r.h),
            ])
            .map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| config_err(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

pub fn cmd_report(paths: &[PathBuf], out_dir: Option<&Path>) -> Result<Report, CliError> {
    if paths.is_empty() {
        return Err(config_err("report needs at least one history or result file"));
    }
    let report = build_report(paths)?;
    let table = report.table_csv()?;
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        fs::write(dir.join("curves.csv"), report.curves_csv()).map_err(|e| config_err(e.to_string()))?;
        fs::write(dir.join("table.csv"), &table).map_err(|e| config_err(e.to_string()))?;
    }
    print!("{table}");
    Ok(report)
}

pub fn cmd_convert_descriptions(csv_path: &Path, dataset_id: &str, out_path: &Path) -> Result<usize, CliError> {
    let text = fs::read_to_string(csv_path).map_err(|e| config_err(format!("cannot read {}: {e}", csv_path.display())))?;
    let mut out =
        BufWriter::new(File::create(out_path).map_err(|e| config_err(format!("{}: {e}", out_path.display())))?);
    let n = descriptions::csv_to_jsonl(&text, dataset_id, &mut out).map_err(|e| config_err(e.to_string()))?;
    out.flush().map_err(|e| config_err(e.to_string()))?;
    Ok(n)
}

#[derive(Debug, Parser)]
#[command(name = "promptopt", version, about = "Optimize and analyze prompt templates for vision-language classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the optimization loop and write history and result files.
    Optimize {
        #[arg(long)]
        config: PathBuf,
        /// Dotted override, e.g. `--set run.max_steps=10`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score word-removal variants of a prompt on both splits.
    Occlude {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, value_enum, default_value = "windows")]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_MAX_VARIANTS)]
        max_variants: usize,
        /// Treat this phrase as one unit (repeatable).
        #[arg(long = "phrase")]
        phrases: Vec<String>,
        /// Extra hand-written variant to score (repeatable).
        #[arg(long = "variant")]
        variants: Vec<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Merge histories into curve data and a comparison table.
    Report {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Score one prompt on the base and novel splits.
    Score {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Convert a `class,description` CSV into description JSONL.
    ConvertDescriptions {
        csv: PathBuf,
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Optimize { config, overrides } => cmd_optimize(&config, &overrides).map(|_| ()),
        Command::Occlude { config, prompt, mode, max_variants, phrases, variants, overrides } => {
            let args = OccludeArgs { prompt: &prompt, mode, max_variants, phrases: &phrases, variants: &variants };
            cmd_occlude(&config, &overrides, &args).map(|_| ())
        }
        Command::Report { paths, out_dir } => cmd_report(&paths, out_dir.as_deref()).map(|_| ()),
        Command::Score { config, prompt, overrides } => cmd_score(&config, &overrides, &prompt),
        Command::ConvertDescriptions { csv, dataset, out } => {
            cmd_convert_descriptions(&csv, &dataset, &out).map(|n| println!("wrote {n} records"))
        }
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
