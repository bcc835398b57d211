use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Draws allowed per pattern before a repeated pattern is accepted.
const MAX_REDRAWS: usize = 64;

/// Which patches of a window are hidden from the model.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MaskPattern {
    patch_len: usize,
    masked: Vec<bool>,
}

impl MaskPattern {
    pub fn new(patch_len: usize, masked: Vec<bool>) -> Result<Self> {
        if patch_len == 0 || masked.is_empty() {
            return Err(Error::InvalidArgument(
                "mask pattern needs patch_len >= 1 and at least one patch".into(),
            ));
        }
        Ok(Self { patch_len, masked })
    }

    /// Masks exactly `count` patches drawn without replacement.
    pub fn random(patch_count: usize, patch_len: usize, count: usize, rng: &mut SeededRng) -> Self {
        let mut masked = vec![false; patch_count];
        for p in rng.sample_without_replacement(patch_count, count.min(patch_count)) {
            masked[p] = true;
        }
        Self { patch_len, masked }
    }

    pub fn patch_len(&self) -> usize {
        self.patch_len
    }

    pub fn patch_count(&self) -> usize {
        self.masked.len()
    }

    pub fn patches(&self) -> &[bool] {
        &self.masked
    }

    pub fn masked_count(&self) -> usize {
        self.masked.iter().filter(|&&m| m).count()
    }

    /// Number of covered samples.
    pub fn sample_len(&self) -> usize {
        self.patch_len * self.masked.len()
    }

    pub fn is_sample_masked(&self, i: usize) -> bool {
        self.masked[i / self.patch_len]
    }

    /// Number of masked samples.
    pub fn masked_samples(&self) -> usize {
        self.masked_count() * self.patch_len
    }
}

/// `k` fixed masks, each hiding `round(mask_ratio * patch_count)` patches.
/// A pattern equal to an earlier one is redrawn, so the list is pairwise
/// distinct whenever enough distinct patterns exist.
pub fn make_fixed_masks(
    k: usize,
    patch_count: usize,
    patch_len: usize,
    mask_ratio: f64,
    seed: u64,
) -> Vec<MaskPattern> {
    let count = (mask_ratio * patch_count as f64).round() as usize;
    let mut rng = SeededRng::derive(seed, &["fixed_masks"]);
    let mut out: Vec<MaskPattern> = Vec::with_capacity(k);
    for _ in 0..k {
        let mut pattern = MaskPattern::random(patch_count, patch_len, count, &mut rng);
        for _ in 0..MAX_REDRAWS {
            if !out.contains(&pattern) {
                break;
            }
            pattern = MaskPattern::random(patch_count, patch_len, count, &mut rng);
        }
        out.push(pattern);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_patches_half_masked() {
        let masks = make_fixed_masks(8, 40, 50, 0.5, 42);
        assert_eq!(masks.len(), 8);
        for m in &masks {
            assert_eq!(m.masked_count(), 20);
            assert_eq!(m.sample_len(), 2000);
        }
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(masks[i], masks[j]);
            }
        }
    }

    #[test]
    fn deterministic_under_seed() {
        assert_eq!(make_fixed_masks(4, 40, 50, 0.5, 7), make_fixed_masks(4, 40, 50, 0.5, 7));
        assert_ne!(make_fixed_masks(4, 40, 50, 0.5, 7), make_fixed_masks(4, 40, 50, 0.5, 8));
    }

    #[test]
    fn collisions_are_redrawn() {
        // 4 patches, 1 masked: exactly 4 distinct patterns exist.
        let masks = make_fixed_masks(4, 4, 10, 0.25, 1);
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(masks[i], masks[j]);
            }
        }
        // More masks than patterns still returns k entries.
        assert_eq!(make_fixed_masks(6, 4, 10, 0.25, 1).len(), 6);
    }

    #[test]
    fn sample_lookup() {
        let m = MaskPattern::new(3, vec![false, true]).unwrap();
        let got: Vec<bool> = (0..6).map(|i| m.is_sample_masked(i)).collect();
        assert_eq!(got, [false, false, false, true, true, true]);
        assert_eq!(m.masked_samples(), 3);
    }
}
