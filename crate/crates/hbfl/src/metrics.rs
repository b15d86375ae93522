//! Detection metrics: confusion counts and the percentage scores reported per
//! attack class (accuracy, detection rate, false alarm rate, F1). Per-class
//! scores are computed over the benign rows plus that class's attack rows.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

/// Per-class scores in percent. A metric whose denominator is zero is
/// reported as undefined (`None`), distinct from 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: String,
    pub counts: ConfusionCounts,
    pub accuracy: Option<f64>,
    pub dr: Option<f64>,
    pub far: Option<f64>,
    pub f1: Option<f64>,
}

fn pct(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(100.0 * num as f64 / den as f64)
    }
}

/// Thresholds scores against `threshold` and tallies the confusion counts.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels.iter()) {
        let predicted_attack = s >= threshold;
        match (predicted_attack, y == 1) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    c
}

/// Derives the percentage scores from raw counts.
pub fn metrics_from_counts(class: &str, counts: ConfusionCounts) -> ClassMetrics {
    let accuracy = pct(counts.tp + counts.tn, counts.total());
    let dr = pct(counts.tp, counts.tp + counts.fn_);
    let far = pct(counts.fp, counts.fp + counts.tn);
    let precision = pct(counts.tp, counts.tp + counts.fp);
    let f1 = match (dr, precision) {
        (Some(d), Some(p)) if d + p > 0.0 => Some(2.0 * d * p / (d + p)),
        (Some(_), Some(_)) => Some(0.0),
        _ => None,
    };
    ClassMetrics { class: class.to_string(), counts, accuracy, dr, far, f1 }
}

/// Computes one `ClassMetrics` per attack class present in `classes`. Each
/// class is scored on the slice of benign rows plus that class's rows.
pub fn compute_metrics(
    scores: &[f64],
    labels: &[u8],
    classes: &[String],
    benign_class: &str,
    threshold: f64,
) -> Result<Vec<ClassMetrics>> {
    if scores.len() != labels.len() || scores.len() != classes.len() {
        return Err(Error::Argument("scores/labels/classes length mismatch".into()));
    }
    if scores.is_empty() {
        return Err(Error::Argument("empty evaluation set".into()));
    }
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(Error::Argument(format!("threshold {threshold} must be in (0,1)")));
    }
    let attack_classes: BTreeSet<&str> = classes
        .iter()
        .map(String::as_str)
        .filter(|c| *c != benign_class)
        .collect();
    let mut out = Vec::with_capacity(attack_classes.len());
    for class in attack_classes {
        let mut slice_scores = Vec::new();
        let mut slice_labels = Vec::new();
        for i in 0..scores.len() {
            if classes[i] == class || classes[i] == benign_class {
                slice_scores.push(scores[i]);
                slice_labels.push(labels[i]);
            }
        }
        let counts = confusion(&slice_scores, &slice_labels, threshold);
        out.push(metrics_from_counts(class, counts));
    }
    Ok(out)
}
