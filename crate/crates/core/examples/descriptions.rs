//! Load image captions for a class list; captions that name their class are dropped.

use promptopt::descriptions::{load, LoadOptions};
use promptopt::{ClassList, SplitRole};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/objects_captions.jsonl").into());
    let classes = ClassList::new(vec!["cheetah".into(), "airplane".into()], SplitRole::Base)?;
    let loaded = load(&path, "objects", &classes, LoadOptions::default())?;
    for (class, captions) in loaded.set.iter() {
        for c in captions {
            println!("{class}: {c}");
        }
    }
    for w in &loaded.warnings {
        println!("line {}: {:?} for {} ({})", w.line, w.kind, w.class, if w.kept { "kept" } else { "dropped" });
    }
    Ok(())
}
