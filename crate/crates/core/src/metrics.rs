//! Classification metrics.

use serde::{Deserialize, Serialize};

use crate::error::DataError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Micro-averaged F1, which equals accuracy for single-label data.
    pub micro_f1: f64,
    /// Unweighted mean of per-class F1.
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores predictions against gold labels. A class with no predictions has
/// precision 0; one with no gold instances has recall 0.
pub fn evaluate(gold: &[usize], predicted: &[usize], labels: &[&str]) -> Result<Metrics, DataError> {
    assert_eq!(gold.len(), predicted.len(), "gold and predicted lengths differ");
    if gold.is_empty() {
        return Err(DataError::EmptyDataset);
    }
    let k = labels.len();
    let mut tp = vec![0usize; k];
    let mut n_pred = vec![0usize; k];
    let mut n_gold = vec![0usize; k];
    for (&g, &p) in gold.iter().zip(predicted) {
        n_gold[g] += 1;
        n_pred[p] += 1;
        if g == p {
            tp[g] += 1;
        }
    }
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let precision = ratio(tp[c], n_pred[c]);
            let recall = ratio(tp[c], n_gold[c]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassMetrics {
                label: labels[c].to_string(),
                precision,
                recall,
                f1,
                support: n_gold[c],
            }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64;
    Ok(Metrics {
        n: gold.len(),
        micro_f1: ratio(tp.iter().sum(), gold.len()),
        macro_f1,
        per_class,
    })
}
