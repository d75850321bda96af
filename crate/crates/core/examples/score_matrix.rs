//! Loss, accuracy and harmonic mean from a hand-written similarity matrix.

use promptopt::scoring::{evaluate_matrix, harmonic_mean, LabelVector, ScoringConfig, SimilarityMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // three images, three class prompts; image 2 is misclassified
    let sim = SimilarityMatrix::from_rows(vec![
        vec![0.31, 0.22, 0.18],
        vec![0.20, 0.29, 0.24],
        vec![0.27, 0.19, 0.25],
    ])?;
    let labels = LabelVector::new(vec![0, 1, 2]);

    for tau in [1.0, 0.01] {
        let scores = evaluate_matrix(&sim, &labels, ScoringConfig::new(tau)?)?;
        println!("tau={tau:<5} loss={:.4} accuracy={:.2}", scores.loss, scores.accuracy);
    }

    let h = harmonic_mean(69.34, 76.72)?;
    println!("H(69.34, 76.72) = {h:.2}");
    Ok(())
}
