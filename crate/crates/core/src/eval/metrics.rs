//! Confusion counts, sensitivity/specificity, AUC and ROC thresholds.

use super::{EvalError, Result};
use crate::data::Label;
use crate::model::Prediction;
use serde::{Deserialize, Serialize};

/// Serializes NaN as `null` and reads `null` back as NaN.
pub mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NAN))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// NaN when the set has no confused item.
    #[serde(with = "nan_as_null")]
    pub sensitivity: f64,
    /// NaN when the set has no not-confused item.
    #[serde(with = "nan_as_null")]
    pub specificity: f64,
    #[serde(with = "nan_as_null")]
    pub combined: f64,
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub threshold: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Metrics {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize, threshold: f64, auc: Option<f64>) -> Self {
        let ratio = |a: usize, b: usize| if a + b == 0 { f64::NAN } else { a as f64 / (a + b) as f64 };
        let sensitivity = ratio(tp, fn_);
        let specificity = ratio(tn, fp);
        Metrics {
            sensitivity,
            specificity,
            combined: (sensitivity + specificity) / 2.0,
            auc,
            threshold,
            tp,
            fp,
            tn,
            fn_,
        }
    }
}

fn split_scores(preds: &[Prediction]) -> (Vec<f64>, Vec<f64>) {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for p in preds {
        match p.label {
            Label::Confused => pos.push(p.score),
            Label::NotConfused => neg.push(p.score),
        }
    }
    (pos, neg)
}

/// Counts at `threshold` (score at or above it means confused) plus AUC.
pub fn compute_metrics(preds: &[Prediction], threshold: f64) -> Result<Metrics> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput("no predictions to score".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for p in preds {
        match (p.score >= threshold, p.label) {
            (true, Label::Confused) => tp += 1,
            (true, Label::NotConfused) => fp += 1,
            (false, Label::NotConfused) => tn += 1,
            (false, Label::Confused) => fn_ += 1,
        }
    }
    let (pos, neg) = split_scores(preds);
    Ok(Metrics::from_counts(tp, fp, tn, fn_, threshold, auc_pairwise(&pos, &neg)))
}

/// Probability that a random positive outscores a random negative, ties
/// counting one half. Computed from average ranks in `O(n log n)`.
pub fn auc_pairwise(pos: &[f64], neg: &[f64]) -> Option<f64> {
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their average
        let avg = (i + j + 2) as f64 / 2.0;
        rank_sum += avg * all[i..=j].iter().filter(|e| e.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Some((rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// Threshold closest to the ideal ROC corner.
///
/// Candidates are 0, 1 and the midpoints between adjacent distinct scores.
/// Distances are compared exactly on integer counts, and ties go to the
/// smaller threshold.
pub fn select_threshold(preds: &[Prediction]) -> Result<f64> {
    let (pos, neg) = split_scores(preds);
    if pos.is_empty() || neg.is_empty() {
        return Err(EvalError::OneClassOnly);
    }
    let (p, n) = (pos.len() as u128, neg.len() as u128);
    let mut pos = pos;
    let mut neg = neg;
    pos.sort_by(f64::total_cmp);
    neg.sort_by(f64::total_cmp);
    let mut distinct: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut candidates = vec![0.0, 1.0];
    candidates.extend(distinct.windows(2).map(|w| w[0] + (w[1] - w[0]) / 2.0));
    candidates.sort_by(f64::total_cmp);

    // Squared distance to (0, 1) scaled by (p n)^2, exact in integers.
    let cost = |fp: u128, fn_: u128| (fp * p) * (fp * p) + (fn_ * n) * (fn_ * n);
    let mut best: Option<(u128, f64)> = None;
    for t in candidates {
        let fn_ = pos.partition_point(|&s| s < t) as u128;
        let fp = n - neg.partition_point(|&s| s < t) as u128;
        let c = cost(fp, fn_);
        if best.is_none_or(|b| c < b.0) {
            best = Some((c, t));
        }
    }
    Ok(best.map_or(0.0, |b| b.1))
}

/// Per-task majority vote over item predictions, ties counting as confused.
/// Returns one prediction per task with the mean item score.
pub fn task_votes(preds: &[Prediction], threshold: f64) -> Vec<(Prediction, bool)> {
    let mut order: Vec<&str> = Vec::new();
    let mut acc: std::collections::HashMap<&str, (usize, usize, f64, Label)> = std::collections::HashMap::new();
    for p in preds {
        let e = acc.entry(p.task_id.as_str()).or_insert_with(|| {
            order.push(p.task_id.as_str());
            (0, 0, 0.0, p.label)
        });
        e.0 += usize::from(p.score >= threshold);
        e.1 += 1;
        e.2 += p.score;
    }
    order
        .into_iter()
        .map(|t| {
            let (yes, total, sum, label) = acc[t];
            (
                Prediction {
                    item_id: t.to_string(),
                    task_id: t.to_string(),
                    score: sum / total as f64,
                    label,
                },
                2 * yes >= total,
            )
        })
        .collect()
}

/// Metrics of task-level majority votes.
pub fn vote_metrics(preds: &[Prediction], threshold: f64) -> Result<Metrics> {
    let votes = task_votes(preds, threshold);
    if votes.is_empty() {
        return Err(EvalError::EmptyInput("no predictions to vote on".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (p, yes) in &votes {
        match (yes, p.label) {
            (true, Label::Confused) => tp += 1,
            (true, Label::NotConfused) => fp += 1,
            (false, Label::NotConfused) => tn += 1,
            (false, Label::Confused) => fn_ += 1,
        }
    }
    let scored: Vec<Prediction> = votes.into_iter().map(|(p, _)| p).collect();
    let (pos, neg) = split_scores(&scored);
    Ok(Metrics::from_counts(tp, fp, tn, fn_, threshold, auc_pairwise(&pos, &neg)))
}
