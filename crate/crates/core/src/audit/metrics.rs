use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    TopKMean,
    Mean,
}

/// How window scores become one subject score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregationPolicy {
    pub kind: AggregationKind,
    pub k: usize,
    /// Windows sampled per subject upstream.
    pub window_cap: usize,
}

pub fn aggregate(scores: &[f64], policy: &AggregationPolicy) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("cannot aggregate an empty score list".into()));
    }
    match policy.kind {
        AggregationKind::Mean => Ok(scores.iter().sum::<f64>() / scores.len() as f64),
        AggregationKind::TopKMean => {
            if policy.k == 0 {
                return Err(Error::InvalidArgument("top-k aggregation needs k >= 1".into()));
            }
            let mut sorted = scores.to_vec();
            sorted.sort_by(|a, b| b.total_cmp(a));
            let k = policy.k.min(sorted.len());
            Ok(sorted[..k].iter().sum::<f64>() / k as f64)
        }
    }
}

/// Decision threshold chosen on calibration non-members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub threshold: f64,
    pub alpha: f64,
    pub achieved_fpr: f64,
}

/// Smallest candidate threshold whose calibration FPR (score >= threshold)
/// stays within `alpha`. Candidates are the distinct scores plus one value
/// above the maximum.
pub fn calibrate_threshold(nonmember_scores: &[f64], alpha: f64) -> Result<CalibrationResult> {
    if nonmember_scores.is_empty() {
        return Err(Error::InsufficientSubjects("calibration split has no non-member scores".into()));
    }
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1), got {alpha}")));
    }
    if nonmember_scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numerical("non-finite calibration score".into()));
    }
    let n = nonmember_scores.len();
    let mut sorted = nonmember_scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let max = sorted[0];
    let mut sentinel = max + 1.0;
    if sentinel <= max {
        sentinel = max.next_up();
    }
    let mut best = CalibrationResult {
        threshold: sentinel,
        alpha,
        achieved_fpr: 0.0,
    };
    // Walk candidates downwards; at value v, every score >= v is counted.
    let mut i = 0;
    while i < n {
        let v = sorted[i];
        while i < n && sorted[i] == v {
            i += 1;
        }
        let fpr = i as f64 / n as f64;
        if fpr > alpha {
            break;
        }
        best = CalibrationResult {
            threshold: v,
            alpha,
            achieved_fpr: fpr,
        };
    }
    Ok(best)
}

/// Mann-Whitney AUC: the fraction of (member, non-member) pairs ranked
/// correctly, ties counting one half.
pub fn auc(members: &[f64], nonmembers: &[f64]) -> Result<f64> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InsufficientSubjects("AUC needs members and non-members".into()));
    }
    let mut all: Vec<(f64, bool)> = members
        .iter()
        .map(|&s| (s, true))
        .chain(nonmembers.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Midranks (1-based) summed over members.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * all[i..j].iter().filter(|e| e.1).count() as f64;
        i = j;
    }
    let (m, n) = (members.len() as f64, nonmembers.len() as f64);
    Ok((rank_sum - m * (m + 1.0) / 2.0) / (m * n))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdMetrics {
    pub tpr: f64,
    pub fpr: f64,
    pub adv: f64,
}

pub fn evaluate_at_threshold(members: &[f64], nonmembers: &[f64], threshold: f64) -> Result<ThresholdMetrics> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::InsufficientSubjects("test split needs members and non-members".into()));
    }
    if !threshold.is_finite() {
        return Err(Error::InvalidArgument(format!("threshold must be finite, got {threshold}")));
    }
    let rate = |v: &[f64]| v.iter().filter(|&&s| s >= threshold).count() as f64 / v.len() as f64;
    let (tpr, fpr) = (rate(members), rate(nonmembers));
    Ok(ThresholdMetrics { tpr, fpr, adv: tpr - fpr })
}

/// Subject-level AUC, TPR at the calibrated threshold, and advantage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsTriple {
    pub auc: f64,
    pub tpr_at_alpha: f64,
    pub adv: f64,
}
