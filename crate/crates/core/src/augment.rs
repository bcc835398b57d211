//! Stochastic view generation for contrastive training and the consistency
//! attack.

use serde::{Deserialize, Serialize};

use crate::corpus::WINDOW_LEN;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Transforms applied in order: circular shift, amplitude scale, Gaussian
/// jitter, optional zeroed segment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub amplitude_scale_range: [f64; 2],
    pub time_shift_max: usize,
    pub jitter_std: f64,
    pub mask_segment_len: usize,
    pub mask_prob: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            amplitude_scale_range: [0.8, 1.2],
            time_shift_max: 125,
            jitter_std: 0.05,
            mask_segment_len: 250,
            mask_prob: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Every transform disabled.
    pub fn identity() -> Self {
        Self {
            amplitude_scale_range: [1.0, 1.0],
            time_shift_max: 0,
            jitter_std: 0.0,
            mask_segment_len: 0,
            mask_prob: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.amplitude_scale_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return Err(Error::Config(format!(
                "augment.amplitude_scale_range: need 0 <= lo <= hi, got [{lo}, {hi}]"
            )));
        }
        if self.time_shift_max >= WINDOW_LEN {
            return Err(Error::Config(format!(
                "augment.time_shift_max: must be < {WINDOW_LEN}, got {}",
                self.time_shift_max
            )));
        }
        if !(self.jitter_std >= 0.0 && self.jitter_std.is_finite()) {
            return Err(Error::Config(format!(
                "augment.jitter_std: must be finite and >= 0, got {}",
                self.jitter_std
            )));
        }
        if !(0.0..=1.0).contains(&self.mask_prob) {
            return Err(Error::Config(format!(
                "augment.mask_prob: must lie in [0, 1], got {}",
                self.mask_prob
            )));
        }
        if self.mask_segment_len > WINDOW_LEN {
            return Err(Error::Config(format!(
                "augment.mask_segment_len: must be <= {WINDOW_LEN}, got {}",
                self.mask_segment_len
            )));
        }
        Ok(())
    }
}

/// Draws one augmented view of `window`. The input is left untouched.
pub fn sample_view(window: &[f64], cfg: &AugmentConfig, rng: &mut SeededRng) -> Vec<f64> {
    let n = window.len();
    if n == 0 {
        return Vec::new();
    }
    let max_shift = cfg.time_shift_max.min(n - 1) as i64;
    let shift = rng.int_inclusive(-max_shift, max_shift);
    let [lo, hi] = cfg.amplitude_scale_range;
    let scale = rng.uniform_range(lo, hi);

    // out[i] = window[(i - shift) mod n]
    let offset = shift.rem_euclid(n as i64) as usize;
    let mut out = Vec::with_capacity(n);
    out.extend_from_slice(&window[n - offset..]);
    out.extend_from_slice(&window[..n - offset]);

    for v in &mut out {
        *v *= scale;
        if cfg.jitter_std > 0.0 {
            *v += cfg.jitter_std * rng.normal();
        }
    }
    if cfg.mask_prob > 0.0 && cfg.mask_segment_len > 0 && rng.uniform() < cfg.mask_prob {
        let len = cfg.mask_segment_len.min(n);
        let start = rng.index(n - len + 1);
        out[start..start + len].fill(0.0);
    }
    out
}
