use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Summary statistics of one subject's window scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectFeatureVector {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub q90: f64,
}

impl SubjectFeatureVector {
    pub fn to_array(self) -> [f64; 4] {
        [self.mean, self.std, self.max, self.q90]
    }
}

/// Mean, population std, maximum and nearest-rank 90th percentile.
pub fn subject_features(scores: &[f64]) -> Result<SubjectFeatureVector> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("subject has no window scores".into()));
    }
    let n = scores.len();
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    // 1-based rank ceil(0.9 n), in integer arithmetic.
    let rank = (9 * n).div_ceil(10).max(1);
    Ok(SubjectFeatureVector {
        mean,
        std: var.sqrt(),
        max: sorted[n - 1],
        q90: sorted[rank - 1],
    })
}
