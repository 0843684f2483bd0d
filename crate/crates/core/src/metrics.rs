//! Micro-averaged precision, recall and F1 over labeled spans, and
//! exact-match frame accuracy.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semimarkov::Segmentation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        Self {
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
            // equal to the harmonic mean of P and R, without the extra rounding
            f1: ratio(2 * tp, 2 * tp + fp + fn_),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(f, "{:<10} {:>8}", "tp", self.true_positives)?;
        writeln!(f, "{:<10} {:>8}", "fp", self.false_positives)?;
        writeln!(f, "{:<10} {:>8}", "fn", self.false_negatives)?;
        writeln!(f, "{:<10} {:>8.4}", "precision", self.precision)?;
        writeln!(f, "{:<10} {:>8.4}", "recall", self.recall)?;
        write!(f, "{:<10} {:>8.4}", "f1", self.f1)
    }
}

/// Micro-averaged scores over aligned per-instance argument lists. Each
/// list should hold non-null arguments only; duplicates count once.
pub fn score_arguments<K: Ord>(predictions: &[Vec<K>], golds: &[Vec<K>]) -> Result<EvalReport> {
    if predictions.len() != golds.len() {
        return Err(Error::Validation(format!(
            "{} predicted instances vs {} gold instances",
            predictions.len(),
            golds.len()
        )));
    }
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, g) in predictions.iter().zip(golds) {
        let p: BTreeSet<&K> = p.iter().collect();
        let g: BTreeSet<&K> = g.iter().collect();
        let hit = p.intersection(&g).count();
        tp += hit;
        fp += p.len() - hit;
        fn_ += g.len() - hit;
    }
    Ok(EvalReport::from_counts(tp, fp, fn_))
}

/// Non-null `(start, end, label)` triples.
pub fn argument_triples(s: &Segmentation) -> Vec<(usize, usize, usize)> {
    s.arguments().map(|a| (a.start, a.end, a.label)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameAccuracy {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

impl fmt::Display for FrameAccuracy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>8}", "metric", "value")?;
        writeln!(f, "{:<10} {:>8}", "correct", self.correct)?;
        writeln!(f, "{:<10} {:>8}", "total", self.total)?;
        write!(f, "{:<10} {:>8.4}", "accuracy", self.accuracy)
    }
}

/// Fraction of targets whose predicted frame equals the gold frame.
pub fn score_frames<S: PartialEq>(predictions: &[S], golds: &[S]) -> Result<FrameAccuracy> {
    if predictions.len() != golds.len() {
        return Err(Error::Validation(format!(
            "{} predicted frames vs {} gold frames",
            predictions.len(),
            golds.len()
        )));
    }
    let correct = predictions
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count();
    Ok(FrameAccuracy {
        correct,
        total: golds.len(),
        accuracy: ratio(correct, golds.len()),
    })
}
