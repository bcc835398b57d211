use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::AugmentConfig;
use crate::corpus::WINDOW_LEN;
use crate::error::{Error, Result};
use crate::nn::layers::pooled_len;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    SimclrCnn,
    Ts2vec,
    MaeCnn,
    MaeTransformer,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::SimclrCnn,
        Family::Ts2vec,
        Family::MaeCnn,
        Family::MaeTransformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::SimclrCnn => "simclr_cnn",
            Family::Ts2vec => "ts2vec",
            Family::MaeCnn => "mae_cnn",
            Family::MaeTransformer => "mae_transformer",
        }
    }

    pub fn is_contrastive(self) -> bool {
        matches!(self, Family::SimclrCnn | Family::Ts2vec)
    }

    pub fn is_mae(self) -> bool {
        !self.is_contrastive()
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown encoder family {s:?}; expected one of simclr_cnn, ts2vec, mae_cnn, mae_transformer"
                ))
            })
    }
}

mod defaults {
    use crate::augment::AugmentConfig;

    pub fn embedding_dim() -> usize {
        64
    }
    pub fn conv_channels() -> Vec<usize> {
        vec![16, 32, 64]
    }
    pub fn conv_kernel() -> usize {
        7
    }
    pub fn conv_stride() -> usize {
        2
    }
    pub fn model_dim() -> usize {
        64
    }
    pub fn attention_blocks() -> usize {
        2
    }
    pub fn temperature() -> f64 {
        0.2
    }
    pub fn patch_len() -> usize {
        50
    }
    pub fn mask_ratio() -> f64 {
        0.5
    }
    pub fn resolutions() -> usize {
        3
    }
    pub fn epochs() -> usize {
        5
    }
    pub fn batch_size() -> usize {
        64
    }
    pub fn lr() -> f64 {
        1e-3
    }
    pub fn clip_threshold() -> f64 {
        1.0
    }
    pub fn seed() -> u64 {
        42
    }
    pub fn augment() -> AugmentConfig {
        AugmentConfig::default()
    }
}

/// Architecture and optimisation settings of one encoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub family: Family,
    #[serde(default = "defaults::embedding_dim")]
    pub embedding_dim: usize,
    /// Output channels of the conv trunk (CNN families).
    #[serde(default = "defaults::conv_channels")]
    pub conv_channels: Vec<usize>,
    #[serde(default = "defaults::conv_kernel")]
    pub conv_kernel: usize,
    #[serde(default = "defaults::conv_stride")]
    pub conv_stride: usize,
    /// Token width (transformer family).
    #[serde(default = "defaults::model_dim")]
    pub model_dim: usize,
    #[serde(default = "defaults::attention_blocks")]
    pub attention_blocks: usize,
    #[serde(default = "defaults::temperature")]
    pub temperature: f64,
    #[serde(default = "defaults::patch_len")]
    pub patch_len: usize,
    #[serde(default = "defaults::mask_ratio")]
    pub mask_ratio: f64,
    /// Number of pooled resolutions (ts2vec).
    #[serde(default = "defaults::resolutions")]
    pub resolutions: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::lr")]
    pub lr: f64,
    #[serde(default = "defaults::clip_threshold")]
    pub clip_threshold: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    /// Training-time view augmentation (contrastive families).
    #[serde(default = "defaults::augment")]
    pub augment: AugmentConfig,
}

impl EncoderConfig {
    /// Desk-scale defaults: 5 epochs, batch 64.
    pub fn desk(family: Family) -> Self {
        Self {
            family,
            embedding_dim: defaults::embedding_dim(),
            conv_channels: defaults::conv_channels(),
            conv_kernel: defaults::conv_kernel(),
            conv_stride: defaults::conv_stride(),
            model_dim: defaults::model_dim(),
            attention_blocks: defaults::attention_blocks(),
            temperature: defaults::temperature(),
            patch_len: defaults::patch_len(),
            mask_ratio: defaults::mask_ratio(),
            resolutions: defaults::resolutions(),
            epochs: defaults::epochs(),
            batch_size: defaults::batch_size(),
            lr: defaults::lr(),
            clip_threshold: defaults::clip_threshold(),
            seed: defaults::seed(),
            augment: defaults::augment(),
        }
    }

    /// Full-length schedule: 30 epochs, batch 256.
    pub fn paper(family: Family) -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            ..Self::desk(family)
        }
    }

    pub fn patch_count(&self) -> usize {
        WINDOW_LEN / self.patch_len
    }

    /// Patches hidden by every training or scoring mask.
    pub fn masked_patch_count(&self) -> usize {
        (self.mask_ratio * self.patch_count() as f64).round() as usize
    }

    /// Temporal length of the conv trunk's last feature map.
    pub fn trunk_len(&self) -> usize {
        self.conv_channels.iter().fold(WINDOW_LEN, |len, _| {
            if len < self.conv_kernel {
                0
            } else {
                pooled_len(len, self.conv_kernel, self.conv_stride)
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fam = self.family;
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{fam}.{field}: {msg}")));
        if self.embedding_dim == 0 {
            return bad("embedding_dim", "must be >= 1".into());
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("must be > 0, got {}", self.temperature));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad("mask_ratio", format!("must lie in (0, 1), got {}", self.mask_ratio));
        }
        if self.patch_len == 0 || WINDOW_LEN % self.patch_len != 0 {
            return bad(
                "patch_len",
                format!("must divide {WINDOW_LEN}, got {}", self.patch_len),
            );
        }
        if self.masked_patch_count() == 0 || self.masked_patch_count() >= self.patch_count() {
            return bad(
                "mask_ratio",
                format!(
                    "masks {} of {} patches; need at least one masked and one visible",
                    self.masked_patch_count(),
                    self.patch_count()
                ),
            );
        }
        if self.resolutions == 0 {
            return bad("resolutions", "must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr", format!("must be > 0, got {}", self.lr));
        }
        if !(self.clip_threshold > 0.0) {
            return bad("clip_threshold", format!("must be > 0, got {}", self.clip_threshold));
        }
        if self.conv_kernel == 0 || self.conv_stride == 0 {
            return bad("conv_kernel", "kernel and stride must be >= 1".into());
        }
        self.augment.validate()?;
        match fam {
            Family::SimclrCnn | Family::Ts2vec | Family::MaeCnn => {
                if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
                    return bad("conv_channels", "need at least one layer, all >= 1".into());
                }
                let len = self.trunk_len();
                if len == 0 {
                    return bad("conv_channels", "trunk consumes the whole window".into());
                }
                if fam == Family::Ts2vec && len < 1 << (self.resolutions - 1) {
                    return bad(
                        "resolutions",
                        format!("feature map of length {len} too short for {} levels", self.resolutions),
                    );
                }
                if fam == Family::MaeCnn {
                    let last = *self.conv_channels.last().unwrap();
                    if self.embedding_dim != last {
                        return bad(
                            "embedding_dim",
                            format!("must equal the last conv width {last}"),
                        );
                    }
                    let patches = self.patch_count();
                    let k = len / patches;
                    if k == 0 || len / k != patches {
                        return bad(
                            "patch_len",
                            format!("feature map of length {len} cannot be pooled to {patches} tokens"),
                        );
                    }
                }
            }
            Family::MaeTransformer => {
                if self.model_dim == 0 {
                    return bad("model_dim", "must be >= 1".into());
                }
                if self.embedding_dim != self.model_dim {
                    return bad(
                        "embedding_dim",
                        format!("must equal model_dim {}", self.model_dim),
                    );
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_for_every_family() {
        for f in Family::ALL {
            EncoderConfig::desk(f).validate().unwrap();
            EncoderConfig::paper(f).validate().unwrap();
        }
        assert_eq!(EncoderConfig::desk(Family::MaeCnn).trunk_len(), 245);
        assert_eq!(EncoderConfig::desk(Family::MaeCnn).masked_patch_count(), 20);
    }

    #[test]
    fn family_names_roundtrip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
        }
        assert!("resnet".parse::<Family>().is_err());
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut c = EncoderConfig::desk(Family::MaeCnn);
        c.patch_len = 30;
        assert!(c.validate().unwrap_err().to_string().contains("patch_len"));
        let mut c = EncoderConfig::desk(Family::SimclrCnn);
        c.temperature = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("temperature"));
        let mut c = EncoderConfig::desk(Family::MaeTransformer);
        c.mask_ratio = 1.0;
        assert!(c.validate().unwrap_err().to_string().contains("mask_ratio"));
        let mut c = EncoderConfig::desk(Family::Ts2vec);
        c.resolutions = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn missing_fields_take_defaults() {
        let c: EncoderConfig = serde_json::from_str(r#"{"family": "ts2vec"}"#).unwrap();
        assert_eq!(c, EncoderConfig::desk(Family::Ts2vec));
    }
}
