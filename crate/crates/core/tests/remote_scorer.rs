mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use serde_json::{json, Value};

use common::stub::{dead_url, serve, Seen};
use promptopt::evaluator::{EvalError, Evaluator, RemoteEvaluator, ScoreRequest, SplitSpec};
use promptopt::scoring::{evaluate_matrix, LabelVector, ScoringConfig, SimilarityMatrix};
use promptopt::{PromptTemplate, SplitRole};

const LOSS_IDENTITY_K2: f64 = 0.313_261_687_518_222_8;

fn client(url: &str, retries: u32) -> RemoteEvaluator {
    RemoteEvaluator::new(url, Duration::from_secs(5), retries, Duration::ZERO)
}

fn splits() -> (u16, String) {
    (200, json!({"base": ["cat", "dog"], "novel": ["car", "bus", "tram"]}).to_string())
}

/// Answers /score with one image per prompt whose matrix is given by `cell(i, j)`.
fn square_service(cell: fn(usize, usize) -> f64, drop_column: bool) -> impl Fn(&Seen) -> (u16, String) {
    move |req: &Seen| {
        if req.url.starts_with("/health") {
            return (200, json!({"status": "ok", "model_id": "ViT-B/16", "datasets": ["toy"]}).to_string());
        }
        if req.url.starts_with("/splits") {
            return if req.url.contains("dataset_id=toy") { splits() } else { (404, "{}".into()) };
        }
        let body: ScoreRequest = serde_json::from_str(&req.body).unwrap();
        if body.dataset_id != "toy" {
            return (404, json!({"error": "unknown dataset"}).to_string());
        }
        let k = body.prompts.len();
        let cols = if drop_column { k - 1 } else { k };
        let sims: Vec<f64> = (0..k).flat_map(|i| (0..cols).map(move |j| cell(i, j))).collect();
        let reply = json!({"similarities": sims, "labels": (0..k).collect::<Vec<_>>(), "temperature": 1.0, "n": k, "k": cols});
        (200, reply.to_string())
    }
}

fn identity(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

#[test]
fn identity_matrix_scores() {
    let stub = serve(square_service(identity, false));
    let remote = client(&stub.url, 0);
    assert_eq!(remote.health().unwrap().status, "ok");
    let scores = remote.score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap();
    assert!((scores.loss - LOSS_IDENTITY_K2).abs() < 1e-6, "{}", scores.loss);
    assert_eq!(scores.accuracy, 100.0);

    let posts: Vec<Seen> = stub.requests().into_iter().filter(|r| r.method == "POST").collect();
    let sent: Value = serde_json::from_str(&posts[0].body).unwrap();
    assert_eq!(sent["role"], "base");
    assert_eq!(sent["shots"], 1);
    assert_eq!(sent["prompts"], json!(["a photo of a cat.", "a photo of a dog."]));
}

#[test]
fn class_lists_are_cached() {
    let stub = serve(square_service(identity, false));
    let remote = client(&stub.url, 0);
    for _ in 0..3 {
        remote.score(&PromptTemplate::anchor(), &SplitSpec::novel("toy")).unwrap();
    }
    let split_calls = stub.requests().iter().filter(|r| r.url.starts_with("/splits")).count();
    assert_eq!(split_calls, 1);
    assert_eq!(remote.class_names("toy", SplitRole::Novel).unwrap().len(), 3);
}

#[test]
fn column_mismatch_is_a_schema_error() {
    let stub = serve(square_service(identity, true));
    let err = client(&stub.url, 0).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap_err();
    assert!(matches!(err, EvalError::Schema(_)), "{err:?}");
}

#[test]
fn out_of_range_similarity_is_a_schema_error() {
    let stub = serve(square_service(|i, j| if i == j { 1.2 } else { 0.0 }, false));
    let err = client(&stub.url, 0).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap_err();
    assert!(matches!(err, EvalError::Schema(_)), "{err:?}");
}

#[test]
fn float_slack_is_clamped() {
    let stub = serve(square_service(|i, j| if i == j { 1.000_000_5 } else { 0.0 }, false));
    let scores = client(&stub.url, 0).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap();
    assert!((scores.loss - LOSS_IDENTITY_K2).abs() < 1e-6);
}

#[test]
fn unknown_dataset() {
    let stub = serve(square_service(identity, false));
    let err = client(&stub.url, 0).score(&PromptTemplate::anchor(), &SplitSpec::base("nope")).unwrap_err();
    assert!(matches!(err, EvalError::UnknownSplit { ref dataset_id, .. } if dataset_id == "nope"), "{err:?}");
}

#[test]
fn unreachable_service_is_a_transport_error() {
    let err = client(&dead_url(), 2).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap_err();
    assert!(matches!(err, EvalError::Transport(_)), "{err:?}");
}

#[test]
fn server_errors_are_retried() {
    let failures = Arc::new(AtomicUsize::new(2));
    let inner = square_service(identity, false);
    let left = failures.clone();
    let stub = serve(move |req| {
        if req.method == "POST" && left.load(Ordering::SeqCst) > 0 {
            left.fetch_sub(1, Ordering::SeqCst);
            return (503, "{}".into());
        }
        inner(req)
    });
    let scores = client(&stub.url, 2).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap();
    assert_eq!(scores.accuracy, 100.0);
    assert_eq!(stub.requests().iter().filter(|r| r.method == "POST").count(), 3);

    failures.store(5, Ordering::SeqCst);
    let err = client(&stub.url, 1).score(&PromptTemplate::anchor(), &SplitSpec::base("toy")).unwrap_err();
    assert!(matches!(err, EvalError::Http { status: 503, .. }));
}

#[test]
fn remote_scores_match_local_scoring() {
    fn cell(i: usize, j: usize) -> f64 {
        (((i * 7 + j * 13) % 17) as f64 / 8.5 - 1.0) * 0.9
    }
    let stub = serve(square_service(cell, false));
    let template = PromptTemplate::new("a <CLASS> in the street").unwrap();
    let remote = client(&stub.url, 0).score(&template, &SplitSpec::novel("toy")).unwrap();
    let sim = SimilarityMatrix::from_rows((0..3).map(|i| (0..3).map(|j| cell(i, j)).collect()).collect()).unwrap();
    let local = evaluate_matrix(&sim, &LabelVector::new(vec![0, 1, 2]), ScoringConfig::default()).unwrap();
    assert!((remote.loss - local.loss).abs() < 1e-12);
    assert_eq!(remote.accuracy, local.accuracy);
}
