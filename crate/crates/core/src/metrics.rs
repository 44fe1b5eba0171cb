//! Classifier evaluation metrics: per-class precision/recall/F1/support,
//! accuracy, confusion counts, and ranking AUC.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("empty prediction set")]
    Empty,
    #[error("predictions and labels differ in length: {predictions} vs {labels}")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("labels must be 0 or 1")]
    BadLabel,
}

/// Confusion counts with the infected class (1) as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

/// Metrics for one class treated as positive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Occurrences of the class among true labels.
    pub support: u64,
}

/// Full evaluation report over a binary test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// Benign (0) first, infected (1) second.
    pub per_class: [ClassMetrics; 2],
    pub confusion: Confusion,
    pub total: u64,
}

/// Ratio with the 0/0 convention: precision and recall are defined as 0
/// when their denominator is 0.
fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * (precision * recall) / (precision + recall)
    }
}

/// Computes the evaluation report from parallel prediction/label slices.
pub fn compute_metrics(predictions: &[u8], labels: &[u8]) -> Result<MetricsReport, MetricsError> {
    if predictions.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricsError::Empty);
    }
    if predictions.iter().chain(labels).any(|&v| v > 1) {
        return Err(MetricsError::BadLabel);
    }

    let mut tp = 0u64;
    let mut fp = 0u64;
    let mut tn = 0u64;
    let mut fn_ = 0u64;
    for (&pred, &truth) in predictions.iter().zip(labels) {
        match (pred, truth) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 0) => tn += 1,
            _ => fn_ += 1,
        }
    }
    let total = predictions.len() as u64;

    // Infected (1) as positive.
    let p1 = ratio(tp, tp + fp);
    let r1 = ratio(tp, tp + fn_);
    // Benign (0) as positive: the roles of the counts mirror.
    let p0 = ratio(tn, tn + fn_);
    let r0 = ratio(tn, tn + fp);

    Ok(MetricsReport {
        accuracy: ratio(tp + tn, total),
        per_class: [
            ClassMetrics {
                class: 0,
                precision: p0,
                recall: r0,
                f1: f1(p0, r0),
                support: tn + fp,
            },
            ClassMetrics {
                class: 1,
                precision: p1,
                recall: r1,
                f1: f1(p1, r1),
                support: tp + fn_,
            },
        ],
        confusion: Confusion { tp, fp, tn, fn_ },
        total,
    })
}

/// Ranking AUC (probability a positive outscores a negative, ties counting
/// half), computed via the rank-sum statistic.
pub fn ranking_auc(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    let n_pos = positive_scores.len();
    let n_neg = negative_scores.len();
    if n_pos == 0 || n_neg == 0 {
        return 0.5;
    }
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|&s| (s, true))
        .chain(negative_scores.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Average ranks over tie groups.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0; // mean of ranks i+1..=j
        rank_sum_pos += avg_rank * all[i..j].iter().filter(|(_, is_pos)| *is_pos).count() as f64;
        i = j;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    u / (n_pos as f64 * n_neg as f64)
}

/// Renders the report in the per-class table layout used by the train
/// command.
pub fn format_report_table(classifier: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<14} {:<13} {:>9} {:>8} {:>9} {:>8}\n",
        "Classifier", "Category", "Precision", "Recall", "F1-score", "Support"
    ));
    for (name, m) in [
        ("Benign (0)", &report.per_class[0]),
        ("Infected (1)", &report.per_class[1]),
    ] {
        let label = if m.class == 0 { classifier } else { "" };
        out.push_str(&format!(
            "{:<14} {:<13} {:>9.2} {:>8.2} {:>9.2} {:>8}\n",
            label, name, m.precision, m.recall, m.f1, m.support
        ));
    }
    out.push_str(&format!(
        "{:<14} {:<13} {:>9} {:>8} {:>9.2} {:>8}\n",
        "", "Accuracy", "", "", report.accuracy, report.total
    ));
    out
}
