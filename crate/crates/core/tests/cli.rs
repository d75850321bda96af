mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

use common::stub::dead_url;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn promptopt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_promptopt")).args(args).output().unwrap()
}

fn optimize(out: &Path, extra: &[&str]) -> Output {
    let config = fixture("synthetic.json");
    let dir = format!("output.dir={}", out.display());
    let mut args = vec!["optimize", "--config", config.to_str().unwrap(), "--set", &dir];
    args.extend_from_slice(extra);
    promptopt(&args)
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.to_string_lossy().ends_with(suffix))
        .collect();
    out.sort();
    out
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn optimize_synthetic_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = optimize(tmp.path(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));

    let result: Value =
        serde_json::from_str(&std::fs::read_to_string(&files_with_suffix(tmp.path(), ".result.json")[0]).unwrap())
            .unwrap();
    let reason = result["stop_reason"].as_str().unwrap();
    assert!(reason == "max_steps" || reason == "patience", "{reason}");
    assert!(result["metrics"]["base"].as_f64().unwrap() >= 0.0);

    let history = std::fs::read_to_string(&files_with_suffix(tmp.path(), ".history.jsonl")[0]).unwrap();
    let kinds: Vec<String> = history
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap()["kind"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kinds.first().map(String::as_str), Some("header"));
    assert_eq!(kinds.last().map(String::as_str), Some("final"));
    assert_eq!(kinds.iter().filter(|k| *k == "step").count() as u64, result["steps"].as_u64().unwrap());
    assert!(history.contains("instruction-v1"));
}

#[test]
fn patience_above_max_steps_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = optimize(tmp.path(), &["--set", "run.patience=50", "--set", "run.max_steps=10"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("run.patience"), "{}", stderr(&out));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = optimize(tmp.path(), &["--set", "run.max_stepz=10"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unreachable_llm_is_a_backend_error() {
    let tmp = tempfile::tempdir().unwrap();
    let llm = json!({"backend": "openai", "endpoint_url": dead_url(), "max_retries": 0, "retry_backoff_secs": 0.0});
    let set = format!("llm={llm}");
    let out = optimize(tmp.path(), &["--set", &set]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let history = std::fs::read_to_string(&files_with_suffix(tmp.path(), ".history.jsonl")[0]).unwrap();
    let last: Value = serde_json::from_str(history.lines().last().unwrap()).unwrap();
    assert_eq!(last["kind"], "error");
}

fn occlude(out: &Path, prompt: &str, extra: &[&str]) -> Output {
    let config = fixture("synthetic.json");
    let dir = format!("output.dir={}", out.display());
    let mut args = vec!["occlude", "--config", config.to_str().unwrap(), "--prompt", prompt, "--set", &dir];
    args.extend_from_slice(extra);
    promptopt(&args)
}

#[test]
fn occlude_writes_a_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = occlude(tmp.path(), "a photo of a <CLASS>.", &[]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let csv = std::fs::read_to_string(tmp.path().join("occlusion.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("prompt,base,novel,H,is_original"));
    assert_eq!(lines.count(), 10);
    assert!(csv.contains("a photo of a <CLASS>.,") && csv.contains(",true"));
    assert!(tmp.path().join("occlusion.json").exists());
}

#[test]
fn occlude_rejects_a_bad_prompt() {
    let tmp = tempfile::tempdir().unwrap();
    let out = occlude(tmp.path(), "a photo of a cat.", &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("placeholder"), "{}", stderr(&out));
}

#[test]
fn occlude_with_scorer_down() {
    let tmp = tempfile::tempdir().unwrap();
    let ev = json!({"backend": "remote", "service_url": dead_url(), "max_retries": 0, "retry_backoff_secs": 0.0});
    let set = format!("evaluator={ev}");
    let out = occlude(tmp.path(), "a photo of a <CLASS>.", &["--set", &set]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn score_prints_both_splits() {
    let config = fixture("synthetic.json");
    let out = promptopt(&["score", "--config", config.to_str().unwrap(), "--prompt", "a flower with petals, <CLASS>."]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["base"]["accuracy"], 100.0);
    assert_eq!(v["novel"]["accuracy"], 100.0);
    assert_eq!(v["h"], 100.0);
}

#[test]
fn report_from_one_history() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(optimize(tmp.path(), &[]).status.code(), Some(0));
    let history = files_with_suffix(tmp.path(), ".history.jsonl").remove(0);
    let steps = std::fs::read_to_string(&history).unwrap().lines().filter(|l| l.contains("\"kind\":\"step\"")).count();
    let report_dir = tmp.path().join("report");
    let out = promptopt(&["report", history.to_str().unwrap(), "--out-dir", report_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let curves = std::fs::read_to_string(report_dir.join("curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), steps + 1);
    let table = std::fs::read_to_string(report_dir.join("table.csv")).unwrap();
    assert_eq!(table.lines().count(), 2);
}

#[test]
fn report_recomputes_harmonic_mean() {
    let tmp = tempfile::tempdir().unwrap();
    let result = json!({
        "run_id": "hand-made",
        "best": {"template": "a photo of a <CLASS>.", "scores": {"loss": 1.0, "accuracy": 71.76}, "step": 0, "origin": "anchor"},
        "metrics": {"base": 71.76, "novel": 77.00, "h": 0.0}
    });
    let path = tmp.path().join("x.result.json");
    std::fs::write(&path, result.to_string()).unwrap();
    let out = promptopt(&["report", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("hand-made,a photo of a <CLASS>.,71.76,77.00,74.29"), "{stdout}");
}

#[test]
fn report_two_configs_two_rows() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(optimize(tmp.path(), &[]).status.code(), Some(0));
    assert_eq!(optimize(tmp.path(), &["--set", "run.memory_k=1"]).status.code(), Some(0));
    let results = files_with_suffix(tmp.path(), ".result.json");
    assert_eq!(results.len(), 2);
    let args: Vec<&str> = std::iter::once("report").chain(results.iter().map(|p| p.to_str().unwrap())).collect();
    let out = promptopt(&args);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 3);
}

#[test]
fn convert_descriptions_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out_path = tmp.path().join("objects.jsonl");
    let csv = fixture("objects_captions.csv");
    let out = promptopt(&["convert-descriptions", csv.to_str().unwrap(), "--dataset", "objects", "--out", out_path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = std::fs::read_to_string(out_path).unwrap();
    let rows: Vec<Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["description"], "A white jet with a red tail fin, climbing through \"scattered\" clouds.");
}
