//! Scoring mathematics: temperature-scaled softmax over cosine similarities,
//! mean cross-entropy, top-1 accuracy and the base/novel harmonic mean.
//!
//! Everything here is pure. Backends only ever deliver a [`SimilarityMatrix`]
//! and a [`LabelVector`]; the numbers fed back to the optimizer are computed
//! in this module and nowhere else.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoringError {
    #[error("non-finite value {value} at ({row}, {col})")]
    NonFinite { row: usize, col: usize, value: f64 },
    #[error("similarity {value} at ({row}, {col}) is outside [-1, 1]")]
    OutOfRange { row: usize, col: usize, value: f64 },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("similarity matrix has no rows")]
    NoRows,
    #[error("ragged similarity matrix: row {row} has {len} entries, expected {expected}")]
    Ragged { row: usize, len: usize, expected: usize },
    #[error("shape mismatch: {rows} similarity rows but {labels} labels")]
    ShapeMismatch { rows: usize, labels: usize },
    #[error("label {label} at position {index} is out of range for {classes} classes")]
    LabelOutOfRange { index: usize, label: usize, classes: usize },
    #[error("temperature must be positive and finite, got {0}")]
    InvalidTemperature(f64),
    #[error("percentage must be nonnegative and finite, got {0}")]
    NegativeInput(f64),
    #[error("invalid scores: loss {loss}, accuracy {accuracy}")]
    InvalidScores { loss: f64, accuracy: f64 },
}

/// N×K cosine similarities between images (rows) and instantiated prompts (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl SimilarityMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, ScoringError> {
        let n = rows.len();
        if n == 0 {
            return Err(ScoringError::NoRows);
        }
        let k = rows[0].len();
        let mut values = Vec::with_capacity(n * k);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != k {
                return Err(ScoringError::Ragged { row: i, len: row.len(), expected: k });
            }
            values.extend(row);
        }
        Self::from_row_major(n, k, values)
    }

    pub fn from_row_major(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, ScoringError> {
        if rows == 0 {
            return Err(ScoringError::NoRows);
        }
        if cols < 2 {
            return Err(ScoringError::TooFewClasses(cols));
        }
        if values.len() != rows * cols {
            return Err(ScoringError::Ragged {
                row: values.len() / cols,
                len: values.len() % cols,
                expected: cols,
            });
        }
        for (idx, &v) in values.iter().enumerate() {
            let (row, col) = (idx / cols, idx % cols);
            if !v.is_finite() {
                return Err(ScoringError::NonFinite { row, col, value: v });
            }
            if !(-1.0..=1.0).contains(&v) {
                return Err(ScoringError::OutOfRange { row, col, value: v });
            }
        }
        Ok(Self { rows, cols, values })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.cols)
    }
}

/// Ground-truth class index per image row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector(Vec<usize>);

impl LabelVector {
    pub fn new(labels: Vec<usize>) -> Self {
        Self(labels)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn check_against(&self, sim: &SimilarityMatrix) -> Result<(), ScoringError> {
        if self.0.len() != sim.rows() {
            return Err(ScoringError::ShapeMismatch { rows: sim.rows(), labels: self.0.len() });
        }
        for (index, &label) in self.0.iter().enumerate() {
            if label >= sim.cols() {
                return Err(ScoringError::LabelOutOfRange { index, label, classes: sim.cols() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub temperature: f64,
}

impl ScoringConfig {
    pub fn new(temperature: f64) -> Result<Self, ScoringError> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(ScoringError::InvalidTemperature(temperature));
        }
        Ok(Self { temperature })
    }
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { temperature: 1.0 }
    }
}

/// Loss (mean cross-entropy, nats) and top-1 accuracy (percent) of one prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores")]
pub struct EvalScores {
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Deserialize)]
struct RawScores {
    loss: f64,
    accuracy: f64,
}

impl TryFrom<RawScores> for EvalScores {
    type Error = ScoringError;

    fn try_from(raw: RawScores) -> Result<Self, Self::Error> {
        EvalScores::new(raw.loss, raw.accuracy)
    }
}

impl EvalScores {
    pub fn new(loss: f64, accuracy: f64) -> Result<Self, ScoringError> {
        let valid = loss.is_finite() && loss >= 0.0 && (0.0..=100.0).contains(&accuracy);
        if !valid {
            return Err(ScoringError::InvalidScores { loss, accuracy });
        }
        Ok(Self { loss, accuracy })
    }
}

/// Base and novel accuracy together with their harmonic mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub base: f64,
    pub novel: f64,
    pub h: f64,
}

impl SplitMetrics {
    pub fn new(base: f64, novel: f64) -> Result<Self, ScoringError> {
        for v in [base, novel] {
            if !(0.0..=100.0).contains(&v) {
                return Err(ScoringError::NegativeInput(v));
            }
        }
        Ok(Self { base, novel, h: harmonic_mean(base, novel)? })
    }
}

/// `softmax(sim_row / τ)`, computed with the max subtracted first.
pub fn class_probabilities(sim_row: &[f64], config: ScoringConfig) -> Result<Vec<f64>, ScoringError> {
    if sim_row.len() < 2 {
        return Err(ScoringError::TooFewClasses(sim_row.len()));
    }
    ScoringConfig::new(config.temperature)?;
    check_finite_row(sim_row)?;
    let scaled: Vec<f64> = sim_row.iter().map(|s| s / config.temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

fn check_finite_row(row: &[f64]) -> Result<(), ScoringError> {
    match row.iter().position(|v| !v.is_finite()) {
        Some(col) => Err(ScoringError::NonFinite { row: 0, col, value: row[col] }),
        None => Ok(()),
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean over images of `-log p(label | row)`.
pub fn cross_entropy(
    sim: &SimilarityMatrix,
    labels: &LabelVector,
    config: ScoringConfig,
) -> Result<f64, ScoringError> {
    ScoringConfig::new(config.temperature)?;
    labels.check_against(sim)?;
    let tau = config.temperature;
    let total: f64 = sim
        .iter_rows()
        .zip(labels.as_slice())
        .map(|(row, &label)| log_sum_exp(row.iter().map(|s| s / tau)) - row[label] / tau)
        .sum();
    // rounding can push a perfectly peaked row a hair below zero
    Ok((total / sim.rows() as f64).max(0.0))
}

/// Index of the row maximum; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn top1_accuracy(sim: &SimilarityMatrix, labels: &LabelVector) -> Result<f64, ScoringError> {
    labels.check_against(sim)?;
    let hits = sim
        .iter_rows()
        .zip(labels.as_slice())
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(100.0 * hits as f64 / sim.rows() as f64)
}

pub fn harmonic_mean(base: f64, novel: f64) -> Result<f64, ScoringError> {
    for v in [base, novel] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(ScoringError::NegativeInput(v));
        }
    }
    if base + novel == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * base * novel / (base + novel))
}

pub fn evaluate_matrix(
    sim: &SimilarityMatrix,
    labels: &LabelVector,
    config: ScoringConfig,
) -> Result<EvalScores, ScoringError> {
    let loss = cross_entropy(sim, labels, config)?;
    let accuracy = top1_accuracy(sim, labels)?;
    EvalScores::new(loss, accuracy)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOL: f64 = 1e-6;

    fn m(rows: &[&[f64]]) -> SimilarityMatrix {
        SimilarityMatrix::from_rows(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    fn tau(t: f64) -> ScoringConfig {
        ScoringConfig::new(t).unwrap()
    }

    #[test]
    fn probabilities_examples() {
        let p = class_probabilities(&[0.5; 4], tau(1.0)).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let p = class_probabilities(&[1.0, 0.0], tau(1.0)).unwrap();
        assert!((p[0] - 0.731059).abs() < TOL && (p[1] - 0.268941).abs() < TOL);
        let p = class_probabilities(&[1.0, 0.0], tau(0.5)).unwrap();
        assert!((p[0] - 0.880797).abs() < TOL && (p[1] - 0.119203).abs() < TOL);
    }

    #[test]
    fn probabilities_reject_bad_input() {
        assert!(matches!(
            class_probabilities(&[f64::NAN, 0.0], tau(1.0)),
            Err(ScoringError::NonFinite { .. })
        ));
        assert!(class_probabilities(&[1.0], tau(1.0)).is_err());
        assert!(ScoringConfig::new(0.0).is_err());
        assert!(ScoringConfig::new(-1.0).is_err());
    }

    #[test]
    fn tiny_temperature_stays_finite() {
        let p = class_probabilities(&[1.0, -1.0, 0.0], tau(1e-4)).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        let ce = cross_entropy(&m(&[&[-1.0, 1.0]]), &LabelVector::new(vec![0]), tau(1e-4)).unwrap();
        assert!((ce - 2.0e4).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = m(&[&[0.2; 4], &[0.2; 4], &[0.2; 4]]);
        let ce = cross_entropy(&uniform, &LabelVector::new(vec![0, 3, 1]), tau(1.0)).unwrap();
        assert!((ce - 4f64.ln()).abs() < 1e-9);
        let ce = cross_entropy(&m(&[&[1.0, 0.0]]), &LabelVector::new(vec![0]), tau(1.0)).unwrap();
        assert!((ce - 0.313262).abs() < TOL);
        let ce = cross_entropy(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &LabelVector::new(vec![0, 1]), tau(1.0))
            .unwrap();
        assert!((ce - 0.313262).abs() < TOL);
    }

    #[test]
    fn shape_errors() {
        let sim = m(&[&[1.0, 0.0]]);
        assert!(matches!(
            cross_entropy(&sim, &LabelVector::new(vec![0, 1]), tau(1.0)),
            Err(ScoringError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            top1_accuracy(&sim, &LabelVector::new(vec![2])),
            Err(ScoringError::LabelOutOfRange { .. })
        ));
        assert!(SimilarityMatrix::from_rows(vec![vec![0.0, 0.0], vec![0.0]]).is_err());
        assert!(SimilarityMatrix::from_rows(vec![vec![0.0]]).is_err());
        assert!(SimilarityMatrix::from_rows(vec![vec![1.5, 0.0]]).is_err());
        assert!(SimilarityMatrix::from_row_major(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let l = LabelVector::new(vec![0, 1]);
        assert_eq!(top1_accuracy(&m(&[&[0.9, 0.1], &[0.2, 0.8]]), &l).unwrap(), 100.0);
        assert_eq!(top1_accuracy(&m(&[&[0.9, 0.1], &[0.9, 0.1]]), &l).unwrap(), 50.0);
        assert_eq!(top1_accuracy(&m(&[&[0.5, 0.5]]), &LabelVector::new(vec![1])).unwrap(), 0.0);
    }

    #[test]
    fn harmonic_mean_examples() {
        assert!((harmonic_mean(69.34, 76.72).unwrap() - 72.84).abs() < 0.01);
        assert!((harmonic_mean(71.76, 77.00).unwrap() - 74.29).abs() < 0.01);
        assert_eq!(harmonic_mean(42.5, 42.5).unwrap(), 42.5);
        assert_eq!(harmonic_mean(0.0, 0.0).unwrap(), 0.0);
        assert!(harmonic_mean(-1.0, 3.0).is_err());
    }

    #[test]
    fn evaluate_matrix_examples() {
        let uniform = m(&[&[0.1; 4], &[0.1; 4], &[0.1; 4]]);
        let s = evaluate_matrix(&uniform, &LabelVector::new(vec![0, 2, 0]), tau(1.0)).unwrap();
        assert!((s.loss - 1.386294).abs() < TOL);
        assert!((s.accuracy - 200.0 / 3.0).abs() < 1e-9);

        let l = LabelVector::new(vec![0, 1]);
        let s = evaluate_matrix(&m(&[&[1.0, 0.0], &[0.0, 1.0]]), &l, tau(1.0)).unwrap();
        assert!((s.loss - 0.313262).abs() < TOL);
        assert_eq!(s.accuracy, 100.0);
        let s = evaluate_matrix(&m(&[&[0.0, 1.0], &[1.0, 0.0]]), &l, tau(1.0)).unwrap();
        assert!((s.loss - 1.313262).abs() < TOL);
        assert_eq!(s.accuracy, 0.0);
    }

    #[test]
    fn eval_scores_bounds() {
        assert!(EvalScores::new(0.0, 100.0).is_ok());
        assert!(EvalScores::new(-0.1, 50.0).is_err());
        assert!(EvalScores::new(0.1, 101.0).is_err());
        assert!(serde_json::from_str::<EvalScores>(r#"{"loss":1.0,"accuracy":101.0}"#).is_err());
    }

    #[test]
    fn split_metrics_recomputes_h() {
        let sm = SplitMetrics::new(71.76, 77.0).unwrap();
        assert!((sm.h - 74.29).abs() < 0.01);
    }
}
