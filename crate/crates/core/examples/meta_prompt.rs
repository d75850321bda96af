//! Compose a meta-prompt from history and image captions, then fit it to a token budget.

use promptopt::descriptions::DescriptionSet;
use promptopt::metaprompt::{build, enforce_budget, MetaPromptConfig};
use promptopt::{EvalScores, MemoryState, Origin, PromptRecord, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut memory = MemoryState::default();
    memory.seed_anchor(EvalScores::new(1.2104, 64.17)?)?;
    for (i, (text, acc)) in [("a photo of a <CLASS>, a type of pet.", 71.3), ("a cute <CLASS>.", 66.0)].iter().enumerate() {
        memory.insert(PromptRecord::new(PromptTemplate::new(*text)?, EvalScores::new(1.0, *acc)?, i + 1, Origin::Llm)?)?;
    }

    let mut captions = DescriptionSet::new();
    captions.push("beagle", "A short-haired dog with floppy brown ears sniffs at the grass.");
    captions.push("persian", "A long-haired white cat with a flat face rests on a blue cushion.");

    let config = MetaPromptConfig { dataset_blurb: "pets".into(), ..Default::default() };
    let meta = build(&config, &captions, &memory.top_k())?;
    println!("{}", meta.full_text());
    println!("\n~{} tokens", config.estimate_tokens(&meta.full_text()));

    let tight = MetaPromptConfig { token_budget: config.estimate_tokens(&meta.full_text()) - 10, ..config };
    let fitted = enforce_budget(&meta, &tight)?;
    println!(
        "budget {}: descriptions {}, {} history lines",
        tight.token_budget,
        if fitted.description_lines().is_some() { "kept" } else { "dropped" },
        fitted.history_lines().len()
    );
    Ok(())
}
