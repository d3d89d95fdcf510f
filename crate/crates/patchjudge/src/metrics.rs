//! Confusion counts over the two classes (overfitting positive) and
//! the five evaluation metrics, with the pairwise AUC computed
//! exactly as the indicator sum. Undefined values stay explicit
//! markers all the way into the serialized reports.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::ingest::Label;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub true_positive: usize,
    pub false_positive: usize,
    pub false_negative: usize,
    pub true_negative: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.true_positive + self.false_positive + self.false_negative + self.true_negative
    }
}

/// Tallies predictions against ground truth. Overfitting is the
/// positive class: a true positive is an overfitting patch predicted
/// overfitting.
pub fn confusion(predictions: &[Label], labels: &[Label]) -> Result<ConfusionCounts> {
    if predictions.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} predictions against {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut counts = ConfusionCounts::default();
    for (&pred, &truth) in predictions.iter().zip(labels) {
        match (pred, truth) {
            (Label::Overfitting, Label::Overfitting) => counts.true_positive += 1,
            (Label::Overfitting, Label::Correct) => counts.false_positive += 1,
            (Label::Correct, Label::Overfitting) => counts.false_negative += 1,
            (Label::Correct, Label::Correct) => counts.true_negative += 1,
        }
    }
    Ok(counts)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BasicMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

/// The four threshold metrics from the confusion counts. Zero
/// denominators yield `None`, never NaN: precision needs a positive
/// prediction, recall a positive truth, and f1 both plus a non-zero
/// precision-recall sum.
pub fn basic_metrics(c: &ConfusionCounts) -> BasicMetrics {
    let total = c.total();
    let accuracy = if total > 0 {
        Some((c.true_positive + c.true_negative) as f64 / total as f64)
    } else {
        None
    };
    let predicted_positive = c.true_positive + c.false_positive;
    let precision = if predicted_positive > 0 {
        Some(c.true_positive as f64 / predicted_positive as f64)
    } else {
        None
    };
    let actual_positive = c.true_positive + c.false_negative;
    let recall = if actual_positive > 0 {
        Some(c.true_positive as f64 / actual_positive as f64)
    } else {
        None
    };
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    BasicMetrics {
        accuracy,
        precision,
        recall,
        f1,
    }
}

/// Pairwise AUC: over every (overfitting, correct) score pair, the
/// indicator contributes 1 when the overfitting patch scores higher,
/// 0.5 on a tie, 0 otherwise; the result is the mean over all M*N
/// pairs. Undefined when either side is empty.
pub fn auc(overfitting_scores: &[f64], correct_scores: &[f64]) -> Option<f64> {
    if overfitting_scores.is_empty() || correct_scores.is_empty() {
        return None;
    }
    let mut sum = 0.0;
    for &o in overfitting_scores {
        for &c in correct_scores {
            if o > c {
                sum += 1.0;
            } else if o == c {
                sum += 0.5;
            }
        }
    }
    Some(sum / (overfitting_scores.len() * correct_scores.len()) as f64)
}

/// The five reported metrics; `None` serializes to JSON null.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub auc: Option<f64>,
}

pub const CSV_HEADER: &str = "accuracy,precision,recall,f1,auc";

fn csv_cell(value: Option<f64>) -> String {
    match value {
        Some(v) => v.to_string(),
        None => "null".to_string(),
    }
}

impl MetricsReport {
    /// Builds the full report from hard predictions plus the
    /// positive-class scores grouped by ground truth.
    pub fn compute(
        predictions: &[Label],
        labels: &[Label],
        overfitting_scores: &[f64],
        correct_scores: &[f64],
    ) -> Result<MetricsReport> {
        let counts = confusion(predictions, labels)?;
        let basics = basic_metrics(&counts);
        Ok(MetricsReport {
            accuracy: basics.accuracy,
            precision: basics.precision,
            recall: basics.recall,
            f1: basics.f1,
            auc: auc(overfitting_scores, correct_scores),
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// One CSV row matching [`CSV_HEADER`], undefined cells literal
    /// `null`.
    pub fn to_csv_row(&self) -> String {
        [
            self.accuracy,
            self.precision,
            self.recall,
            self.f1,
            self.auc,
        ]
        .map(csv_cell)
        .join(",")
    }

    /// Averages per-fold reports field-wise; a field is defined only
    /// when it is defined in every fold.
    pub fn average(reports: &[MetricsReport]) -> Option<MetricsReport> {
        if reports.is_empty() {
            return None;
        }
        let mean = |pick: fn(&MetricsReport) -> Option<f64>| -> Option<f64> {
            let values: Option<Vec<f64>> = reports.iter().map(pick).collect();
            values.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        };
        Some(MetricsReport {
            accuracy: mean(|r| r.accuracy),
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
            auc: mean(|r| r.auc),
        })
    }
}
