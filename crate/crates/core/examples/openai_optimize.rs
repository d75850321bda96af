//! Optimization with a real chat-completions endpoint and the synthetic scorer.
//!
//! ```text
//! OPENAI_API_KEY=... cargo run --example openai_optimize
//! LLM_ENDPOINT=http://localhost:8000/v1 LLM_MODEL=qwen2 cargo run --example openai_optimize
//! ```

use promptopt::evaluator::GoldWord;
use promptopt::{ClassList, LlmConfig, OpenAiChat, Optimizer, RunConfig, SplitRole, SplitSpec, SyntheticEvaluator, SyntheticWorld};

fn world(seed: u64, names: &[&str], role: SplitRole) -> SyntheticWorld {
    SyntheticWorld {
        seed,
        classes: ClassList::new(names.iter().map(|s| s.to_string()).collect(), role).unwrap(),
        gold_keywords: vec![
            GoldWord { word: "flower".into(), weight: 0.3 },
            GoldWord { word: "petals".into(), weight: 0.2 },
            GoldWord { word: "blossom".into(), weight: 0.2 },
        ],
        images_per_class: 2,
        noise_amplitude: 0.08,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut llm = LlmConfig::default();
    if let Ok(url) = std::env::var("LLM_ENDPOINT") {
        llm.endpoint_url = url;
    } else if std::env::var("OPENAI_API_KEY").map_or(true, |k| k.is_empty()) {
        eprintln!("set OPENAI_API_KEY or LLM_ENDPOINT to run this example");
        return Ok(());
    }
    if let Ok(model) = std::env::var("LLM_MODEL") {
        llm.model_id = model;
    }

    let evaluator = SyntheticEvaluator::new(
        "flowers",
        world(1, &["rose", "tulip", "daisy"], SplitRole::Base),
        world(2, &["lily", "orchid", "iris"], SplitRole::Novel),
    )?;
    let mut config = RunConfig::new(SplitSpec::base("flowers").with_shots(2), SplitSpec::novel("flowers").with_shots(2));
    config.max_steps = 5;
    config.patience = 5;
    config.meta.dataset_blurb = "flowers".into();
    config.llm = llm;

    let backend = OpenAiChat::from_config(&config.llm)?;
    let result = Optimizer::new(config, &evaluator, &backend)?.run()?;
    println!("best: {}  (H {:.2})", result.best.template, result.metrics.h);
    Ok(())
}
