//! Full optimization loop against the synthetic scorer with a scripted LLM.
//! Writes the history JSONL to the path given as the first argument, if any.

use std::fs::File;
use std::io::BufWriter;

use promptopt::evaluator::GoldWord;
use promptopt::llm::ScriptedLlm;
use promptopt::{ClassList, Optimizer, RunConfig, SplitRole, SplitSpec, SyntheticEvaluator, SyntheticWorld};

fn world(seed: u64, names: &[&str], role: SplitRole) -> SyntheticWorld {
    SyntheticWorld {
        seed,
        classes: ClassList::new(names.iter().map(|s| s.to_string()).collect(), role).unwrap(),
        gold_keywords: vec![
            GoldWord { word: "flower".into(), weight: 0.3 },
            GoldWord { word: "petals".into(), weight: 0.2 },
        ],
        images_per_class: 4,
        noise_amplitude: 0.08,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let evaluator = SyntheticEvaluator::new(
        "flowers",
        world(1, &["rose", "tulip", "daisy"], SplitRole::Base),
        world(2, &["lily", "orchid", "iris"], SplitRole::Novel),
    )?;
    let llm = ScriptedLlm::cycling(
        [
            "[an image of a <CLASS>.]\n[a <CLASS> on a table.]",
            "[a flower called <CLASS>.]\n[a photo of a <CLASS>.]",
            "[a flower with soft petals, the <CLASS>.]",
        ]
        .map(|s| promptopt::llm::ScriptedReply::Text(s.into()))
        .to_vec(),
    );

    let mut config = RunConfig::new(SplitSpec::base("flowers").with_shots(4), SplitSpec::novel("flowers").with_shots(4));
    config.max_steps = 10;
    config.patience = 4;
    config.llm.retry_backoff_secs = 0.0;

    let optimizer = Optimizer::new(config, &evaluator, &llm)?;
    let result = match std::env::args().nth(1) {
        Some(path) => optimizer.run_with_history(&mut BufWriter::new(File::create(path)?))?,
        None => optimizer.run()?,
    };

    for s in &result.trajectory {
        println!("step {:>2}: {} new, best so far {:.2}", s.step, s.inserted.len(), s.best_so_far_accuracy);
    }
    println!("stopped: {:?}", result.stop_reason);
    println!("best:    {}", result.best.template);
    println!("base {:.2}  novel {:.2}  H {:.2}", result.metrics.base, result.metrics.novel, result.metrics.h);
    println!("base-split evaluations: {}", result.base_evaluations);
    Ok(())
}
