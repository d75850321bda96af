//! Turn a raw LLM reply into validated templates, with a scripted backend standing in for the API.

use promptopt::descriptions::DescriptionSet;
use promptopt::llm::{parse_candidates, propose, ScriptedLlm, ScriptedReply};
use promptopt::metaprompt::{build, MetaPromptConfig};
use promptopt::{EvalScores, LlmConfig, Origin, PromptRecord, PromptTemplate};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reply = "Sure! Here are some ideas:\n[a photo of a <CLASS>, a type of flower.]\n[a close-up of cat]\n[a bright <CLASS> <CLASS>.]\n[a field of blooming <CLASS>.]";
    println!("parsed: {:?}", parse_candidates(reply));

    let anchor = PromptRecord::new(PromptTemplate::anchor(), EvalScores::new(1.0, 60.0)?, 0, Origin::Anchor)?;
    let meta = build(&MetaPromptConfig::default(), &DescriptionSet::new(), &[anchor])?;

    // first call fails, second rambles, third answers
    let llm = ScriptedLlm::new(vec![
        ScriptedReply::Status(503),
        ScriptedReply::Text("I'd be happy to help with that.".into()),
        ScriptedReply::Text(reply.into()),
    ]);
    let config = LlmConfig { retry_backoff_secs: 0.0, ..Default::default() };
    let set = propose(&llm, &meta, 5, &config)?;
    println!("after {} attempts:", set.attempts);
    for t in &set.templates {
        println!("  accepted {t}");
    }
    for (text, why) in &set.rejected {
        println!("  rejected {text:?}: {why}");
    }
    Ok(())
}
