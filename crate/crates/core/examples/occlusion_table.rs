//! Word-removal sensitivity table for a prompt, scored on the synthetic backend.

use promptopt::evaluator::GoldWord;
use promptopt::occlusion::{analyze, OcclusionPolicy, Segmentation};
use promptopt::{ClassList, PromptTemplate, SplitRole, SplitSpec, SyntheticEvaluator, SyntheticWorld};

fn world(seed: u64, names: &[&str], role: SplitRole) -> SyntheticWorld {
    SyntheticWorld {
        seed,
        classes: ClassList::new(names.iter().map(|s| s.to_string()).collect(), role).unwrap(),
        gold_keywords: vec![
            GoldWord { word: "photo".into(), weight: 0.25 },
            GoldWord { word: "pet".into(), weight: 0.3 },
        ],
        images_per_class: 2,
        noise_amplitude: 0.1,
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let evaluator = SyntheticEvaluator::new(
        "pets",
        world(4, &["beagle", "persian", "pug"], SplitRole::Base),
        world(5, &["sphynx", "boxer", "havanese"], SplitRole::Novel),
    )?;
    let (base, novel) = (SplitSpec::base("pets").with_shots(2), SplitSpec::novel("pets").with_shots(2));

    let prompt = PromptTemplate::new("a photo of a <CLASS>, a type of pet.")?;
    let table = analyze(&prompt, &OcclusionPolicy::default(), &evaluator, &base, &novel)?;
    table.write_csv(std::io::stdout())?;

    println!();
    let phrases = OcclusionPolicy {
        segmentation: Segmentation::UserPhrases(vec!["a type of pet".into()]),
        ..OcclusionPolicy::subsets(16)
    };
    analyze(&prompt, &phrases, &evaluator, &base, &novel)?.write_csv(std::io::stdout())?;
    Ok(())
}
