//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use promptopt::descriptions::DescriptionSet;
use promptopt::evaluator::Evaluator;
use promptopt::llm::ScriptedLlm;
use promptopt::metaprompt::{build, enforce_budget, MetaPromptConfig};
use promptopt::occlusion::{variants, OcclusionPolicy};
use promptopt::optimizer::sweep_memory_k;
use promptopt::scoring::{argmax, class_probabilities, cross_entropy, harmonic_mean, top1_accuracy};
use promptopt::scoring::{LabelVector, ScoringConfig, SimilarityMatrix};
use promptopt::{
    EvalScores, MemoryState, Optimizer, Origin, PromptRecord, PromptTemplate, RunResult, SplitRole,
};

type Outcome = Result<(), String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl Into<String>) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> Outcome {
    ensure(elapsed <= Duration::from_secs(limit_secs), format!("took {elapsed:?}, limit {limit_secs}s"))
}

fn harmonic_mean_reproduction() -> Outcome {
    for (b, n, want) in [(69.34, 76.72, 72.84), (71.76, 77.00, 74.29)] {
        let h = harmonic_mean(b, n).map_err(|e| e.to_string())?;
        ensure((h - want).abs() <= 0.01, format!("H({b}, {n}) = {h:.4}, want {want}"))?;
    }
    Ok(())
}

fn naive_argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn scoring_math() -> Outcome {
    let start = Instant::now();
    for k in 2..=20 {
        for &v in &[-1.0, -0.3, 0.0, 0.42, 1.0] {
            let sim = SimilarityMatrix::from_row_major(7, k, vec![v; 7 * k]).map_err(|e| e.to_string())?;
            let labels = LabelVector::new((0..7).map(|i| i % k).collect());
            let loss = cross_entropy(&sim, &labels, ScoringConfig::default()).map_err(|e| e.to_string())?;
            ensure((loss - (k as f64).ln()).abs() < 1e-9, format!("constant K={k}: loss {loss}"))?;
        }
    }

    let strategy = (1usize..=50, 2usize..=20).prop_flat_map(|(n, k)| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..=1.0, k), n),
            prop::collection::vec(0..k, n),
            -3.0f64..3.0,
        )
    });
    let mut runner = TestRunner::new_with_rng(
        Config { cases: 1000, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    );
    runner
        .run(&strategy, |(rows, labels, shift)| {
            let cfg = ScoringConfig::default();
            for row in &rows {
                let p = class_probabilities(row, cfg).unwrap();
                let q: Vec<f64> = row.iter().map(|x| x + shift).collect();
                let q = class_probabilities(&q, cfg).unwrap();
                for (a, b) in p.iter().zip(&q) {
                    prop_assert!((a - b).abs() < 1e-12);
                }
                prop_assert_eq!(argmax(row), naive_argmax(row));
            }
            let hits = rows.iter().zip(&labels).filter(|(r, &y)| naive_argmax(r) == y).count();
            let sim = SimilarityMatrix::from_rows(rows.clone()).unwrap();
            let acc = top1_accuracy(&sim, &LabelVector::new(labels.clone())).unwrap();
            prop_assert!((acc - 100.0 * hits as f64 / rows.len() as f64).abs() < 1e-9);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    within(start.elapsed(), 5)
}

fn occlusion_variant_set() -> Outcome {
    let got: BTreeSet<String> = variants(&PromptTemplate::anchor(), &OcclusionPolicy::default())
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|t| t.as_str().to_string())
        .collect();
    let want: BTreeSet<String> = [
        "a photo of a <CLASS>.",
        "<CLASS>.",
        "a <CLASS>.",
        "photo <CLASS>.",
        "of <CLASS>.",
        "a photo <CLASS>.",
        "photo of <CLASS>.",
        "of a <CLASS>.",
        "a photo of <CLASS>.",
        "photo of a <CLASS>.",
    ]
    .into_iter()
    .map(String::from)
    .collect();
    ensure(got == want, format!("got {got:?}"))
}

fn best_so_far_nondecreasing(result: &RunResult) -> Outcome {
    let curve: Vec<f64> = result.trajectory.iter().map(|s| s.best_so_far_accuracy).collect();
    ensure(curve.windows(2).all(|w| w[0] <= w[1]), format!("best-so-far curve decreases: {curve:?}"))
}

fn optimizer_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    for seed in [3, 17, 2024] {
        let ev = common::evaluator(seed);
        let pool = &common::POOL;
        let llm = ScriptedLlm::cycling(
            common::pool_replies(pool).into_iter().map(promptopt::llm::ScriptedReply::Text).collect(),
        );
        let mut config = common::run_config(pool.len(), pool.len());
        config.candidates_per_step = 1;
        config.seed = seed;
        let result = Optimizer::new(config.clone(), &ev, &llm).and_then(|o| o.run()).map_err(|e| e.to_string())?;

        // exhaustive oracle: score every pool entry, rank by accuracy, loss, then position
        let mut scored: Vec<(usize, &str, EvalScores)> = Vec::new();
        for (i, text) in pool.iter().enumerate() {
            let t = PromptTemplate::new(*text).unwrap();
            scored.push((i, text, ev.score(&t, &config.base_split).map_err(|e| e.to_string())?));
        }
        scored.sort_by(|a, b| {
            b.2.accuracy.total_cmp(&a.2.accuracy).then(a.2.loss.total_cmp(&b.2.loss)).then(a.0.cmp(&b.0))
        });
        let oracle = scored[0].1;
        ensure(
            result.best.template.as_str() == oracle,
            format!("seed {seed}: run picked {:?}, oracle {oracle:?}", result.best.template.as_str()),
        )?;
        best_so_far_nondecreasing(&result).map_err(|e| format!("seed {seed}: {e}"))?;
    }
    within(start.elapsed(), 10)
}

/// Five fresh templates per reply, never repeating.
fn fresh_replies(steps: usize, per_step: usize) -> ScriptedLlm {
    let words = ["flower", "small", "petals", "bright", "bloom", "wild", "garden", "red"];
    let replies = (0..steps)
        .map(|s| {
            (0..per_step)
                .map(|i| format!("[{} {} shot {s}x{i} of a <CLASS>.]", words[(s + i) % 8], words[(s * 3 + i) % 8]))
                .collect::<Vec<_>>()
                .join("\n")
        })
        .collect::<Vec<_>>();
    ScriptedLlm::from_texts(replies)
}

fn protocol_budget() -> Outcome {
    let start = Instant::now();
    let ev = common::evaluator(5);
    let llm = fresh_replies(100, 5);
    let mut config = common::run_config(100, 100);
    config.candidates_per_step = 5;
    let result = Optimizer::new(config, &ev, &llm).and_then(|o| o.run()).map_err(|e| e.to_string())?;
    let calls = ev.calls(SplitRole::Base);
    ensure(result.steps == 100, format!("stopped after {} steps ({:?})", result.steps, result.stop_reason))?;
    ensure(calls <= 502, format!("{calls} base evaluations"))?;
    ensure(calls == result.base_evaluations, format!("counter {calls} vs reported {}", result.base_evaluations))?;
    within(start.elapsed(), 30)
}

fn budget_enforcement() -> Outcome {
    let cfg = MetaPromptConfig::default();
    let record = |text: String, acc: f64, step: usize| PromptRecord {
        template: PromptTemplate::new(text).unwrap(),
        scores: EvalScores::new(1.0, acc).unwrap(),
        step,
        origin: Origin::Llm,
    };
    let mut descriptions = DescriptionSet::new();
    for i in 0..300 {
        descriptions.push(&format!("class{}", i % 10), format!("caption {i}: {}", "striped fur and a long tail ".repeat(3)));
    }

    // descriptions alone push it over: they go, history stays whole
    let mut memory = MemoryState::new(20);
    memory.seed_anchor(EvalScores::new(1.3, 40.0).unwrap()).unwrap();
    for i in 1..=20 {
        memory.insert(record(format!("prompt number {i} for <CLASS>"), i as f64, i)).unwrap();
    }
    let meta = build(&cfg, &descriptions, &memory.top_k()).map_err(|e| e.to_string())?;
    ensure(cfg.estimate_tokens(&meta.full_text()) > 5000, "first case is not over budget")?;
    let fitted = enforce_budget(&meta, &cfg).map_err(|e| e.to_string())?;
    ensure(fitted.description_lines().is_none(), "descriptions kept")?;
    ensure(fitted.history_lines() == meta.history_lines(), "history trimmed although descriptions sufficed")?;

    // long history: descriptions first, then the weakest lines
    let mut memory = MemoryState::new(60);
    memory.seed_anchor(EvalScores::new(1.3, 40.0).unwrap()).unwrap();
    for i in 1..=60 {
        let text = format!("{} prompt {i} <CLASS>", "a very detailed and long winded description".repeat(8));
        memory.insert(record(text, (i as f64) * 1.5, i)).unwrap();
    }
    let meta = build(&cfg, &descriptions, &memory.top_k()).map_err(|e| e.to_string())?;
    let fitted = enforce_budget(&meta, &cfg).map_err(|e| e.to_string())?;
    let n = fitted.history_lines().len();
    ensure(fitted.description_lines().is_none(), "descriptions kept while history was trimmed")?;
    ensure(n < meta.history_lines().len() && n >= 1, format!("{n} history lines left"))?;
    ensure(fitted.history_lines() == &meta.history_lines()[meta.history_lines().len() - n..], "kept lines are not the best")?;
    ensure(cfg.estimate_tokens(&fitted.full_text()) <= 5000, "still over budget")?;
    let again = enforce_budget(&fitted, &cfg).map_err(|e| e.to_string())?;
    ensure(again.full_text() == fitted.full_text(), "enforce_budget is not idempotent")
}

fn history_bytes(seed: u64) -> Result<Vec<u8>, String> {
    let ev = common::evaluator(seed);
    let llm = ScriptedLlm::cycling(
        common::pool_replies(&common::POOL).into_iter().map(promptopt::llm::ScriptedReply::Text).collect(),
    );
    let mut config = common::run_config(12, 6);
    config.seed = seed;
    config.llm.verbose = true;
    let mut out = Vec::new();
    Optimizer::new(config, &ev, &llm)
        .and_then(|o| o.run_with_history(&mut out))
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn determinism() -> Outcome {
    let a = history_bytes(9)?;
    let b = history_bytes(9)?;
    ensure(!a.is_empty(), "empty history")?;
    ensure(a == b, "history files differ")?;
    ensure(history_bytes(10)? != a, "a different seed gave the same history")
}

fn history_length_sweep() -> Outcome {
    let ev = common::evaluator(21);
    let config = common::run_config(10, 10);
    let replies = || {
        ScriptedLlm::cycling(
            common::pool_replies(&common::POOL).into_iter().map(promptopt::llm::ScriptedReply::Text).collect(),
        )
    };
    let runs = sweep_memory_k(&config, &[0, 1, 5, 20], &ev, replies).map_err(|e| e.to_string())?;
    ensure(runs.len() == 4, "not every memory size completed")?;
    for (k, result) in &runs {
        best_so_far_nondecreasing(result).map_err(|e| format!("k={k}: {e}"))?;
    }

    // k = 0 shows the LLM nothing but the anchor
    let llm = replies();
    let config = promptopt::RunConfig { memory_k: 0, ..config };
    Optimizer::new(config, &ev, &llm).and_then(|o| o.run()).map_err(|e| e.to_string())?;
    for prompt in llm.received() {
        let lines: Vec<&str> = prompt.lines().filter(|l| l.starts_with("text: ")).collect();
        ensure(lines.len() == 1 && lines[0].starts_with("text: a photo of a <CLASS>. |"), format!("k=0 history: {lines:?}"))?;
    }
    Ok(())
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("harmonic mean reproduction", harmonic_mean_reproduction),
        ("scoring math", scoring_math),
        ("occlusion variant set", occlusion_variant_set),
        ("optimizer oracle equivalence", optimizer_oracle_equivalence),
        ("protocol budget", protocol_budget),
        ("budget enforcement", budget_enforcement),
        ("determinism", determinism),
        ("history-length sweep", history_length_sweep),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in criteria {
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panicked".into())));
        match outcome {
            Ok(()) => println!("PASS  {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
