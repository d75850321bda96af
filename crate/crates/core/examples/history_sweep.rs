//! Effect of the number of history entries shown to the LLM.

use promptopt::evaluator::GoldWord;
use promptopt::llm::{ScriptedLlm, ScriptedReply};
use promptopt::optimizer::sweep_memory_k;
use promptopt::{ClassList, RunConfig, SplitRole, SplitSpec, SyntheticEvaluator, SyntheticWorld};

fn world(seed: u64, names: &[&str], role: SplitRole) -> SyntheticWorld {
    SyntheticWorld {
        seed,
        classes: ClassList::new(names.iter().map(|s| s.to_string()).collect(), role).unwrap(),
        gold_keywords: vec![
            GoldWord { word: "aerial".into(), weight: 0.3 },
            GoldWord { word: "satellite".into(), weight: 0.25 },
        ],
        images_per_class: 2,
        noise_amplitude: 0.1,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let evaluator = SyntheticEvaluator::new(
        "eurosat",
        world(8, &["forest", "river", "highway"], SplitRole::Base),
        world(9, &["pasture", "lake", "industrial"], SplitRole::Novel),
    )?;
    let script = || {
        ScriptedLlm::cycling(
            ["[a map of <CLASS>.]", "[an aerial view of <CLASS>.]", "[a satellite image of <CLASS>.]", "[aerial satellite photo of <CLASS>.]"]
                .map(|s| ScriptedReply::Text(s.into()))
                .to_vec(),
        )
    };
    let mut base = RunConfig::new(SplitSpec::base("eurosat").with_shots(2), SplitSpec::novel("eurosat").with_shots(2));
    base.max_steps = 8;
    base.patience = 8;
    base.llm.retry_backoff_secs = 0.0;

    println!("{:>3}  {:>6}  {:>6}  {:>6}  {:>7}  best", "k", "base", "novel", "H", "loss");
    for (k, r) in sweep_memory_k(&base, &[0, 1, 5, 20], &evaluator, script)? {
        println!(
            "{k:>3}  {:>6.2}  {:>6.2}  {:>6.2}  {:>7.4}  {}",
            r.metrics.base, r.metrics.novel, r.metrics.h, r.base_scores.loss, r.best.template
        );
    }
    Ok(())
}
