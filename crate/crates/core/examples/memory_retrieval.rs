//! Episodic memory: dedup on normalized text, ranked top-k, pinned anchor.

use promptopt::{EvalScores, MemoryState, Origin, PromptRecord, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut memory = MemoryState::new(3);
    memory.seed_anchor(EvalScores::new(1.10, 62.5)?)?;

    let proposals = [
        ("a close-up photo of a <CLASS>.", 0.95, 70.0),
        ("A  close-up photo of a <CLASS>.", 0.10, 99.0),
        ("a <CLASS> in the wild.", 1.02, 70.0),
        ("an image of <CLASS>.", 1.40, 55.0),
        ("a blurry photo of a <CLASS>.", 1.30, 58.0),
    ];
    for (step, (text, loss, acc)) in proposals.into_iter().enumerate() {
        let record = PromptRecord::new(PromptTemplate::new(text)?, EvalScores::new(loss, acc)?, step + 1, Origin::Llm)?;
        let added = memory.insert(record)?;
        println!("{:<36} {}", text, if added { "stored" } else { "duplicate, skipped" });
    }

    println!("\ntop-{} plus anchor:", memory.k());
    for r in memory.top_k() {
        println!("  {:<36} acc {:>6.2}  loss {:.4}  ({:?})", r.template, r.scores.accuracy, r.scores.loss, r.origin);
    }
    println!("best: {}", memory.best()?.template);
    Ok(())
}
