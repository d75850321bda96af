//! Score one prompt through a running scorer service.
//!
//! ```text
//! cargo run --example remote_score -- http://localhost:8080 caltech101 "a photo of a <CLASS>."
//! ```

use std::time::Duration;

use promptopt::evaluator::{Evaluator, RemoteEvaluator};
use promptopt::{PromptTemplate, SplitSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let (Some(url), Some(dataset)) = (args.next(), args.next()) else {
        eprintln!("usage: remote_score <service-url> <dataset-id> [prompt]");
        std::process::exit(2);
    };
    let prompt = PromptTemplate::new(args.next().unwrap_or_else(|| "a photo of a <CLASS>.".into()))?;
    let scorer = RemoteEvaluator::new(url, Duration::from_secs(60), 3, Duration::from_secs(1));
    let health = scorer.health()?;
    println!("service {} ({})", health.status, health.model_id);
    for split in [SplitSpec::base(&dataset), SplitSpec::novel(&dataset)] {
        let s = scorer.score(&prompt, &split)?;
        println!("{:?}: loss {:.4}  accuracy {:.2}", split.role, s.loss, s.accuracy);
    }
    Ok(())
}
