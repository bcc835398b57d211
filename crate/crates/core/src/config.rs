//! Run configuration: synthetic cohorts, encoders, attacks and audit
//! protocol in one versioned JSON document.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{AggregationKind, AggregationPolicy};
use crate::augment::AugmentConfig;
use crate::corpus::{generate_synth_subject, RawRecord, SynthSubjectParams};
use crate::encoders::{EncoderConfig, Family};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SCHEMA_VERSION: u32 = 1;

/// A synthetic dataset: every subject draws its parameters uniformly from
/// the given ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortSpec {
    pub dataset_id: String,
    pub subjects: usize,
    pub sampling_rate: u32,
    pub duration_s: f64,
    pub heart_rate: [f64; 2],
    pub qrs_amplitude: [f64; 2],
    pub t_wave_amplitude: [f64; 2],
    pub baseline_wander_freq: [f64; 2],
    #[serde(default)]
    pub baseline_wander_amplitude: [f64; 2],
    pub noise_std: [f64; 2],
    #[serde(default)]
    pub morphology_center: Option<u64>,
    #[serde(default = "one")]
    pub morphology_dispersion: f64,
}

fn one() -> f64 {
    1.0
}

/// One synthetic subject of a cohort.
#[derive(Clone, Debug, PartialEq)]
pub struct CohortSubject {
    pub record_id: String,
    pub params: SynthSubjectParams,
    pub record_seed: u64,
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        let ds = &self.dataset_id;
        let bad = |field: &str, msg: String| Err(Error::Config(format!("cohort {ds}: {field}: {msg}")));
        if ds.is_empty() || ds.contains('/') {
            return Err(Error::Config(format!("cohort dataset_id {ds:?} must be non-empty without '/'")));
        }
        if self.subjects == 0 {
            return bad("subjects", "must be >= 1".into());
        }
        if self.sampling_rate == 0 {
            return bad("sampling_rate", "must be > 0".into());
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s", format!("must be > 0, got {}", self.duration_s));
        }
        for (field, [lo, hi]) in self.ranges() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(field, format!("need lo <= hi, got [{lo}, {hi}]"));
            }
        }
        // Range endpoints must themselves be valid subject parameters.
        for end in 0..2 {
            let p = self.params_at(|r| r[end], 0);
            p.validate().map_err(|e| Error::Config(format!("cohort {ds}: {e}")))?;
        }
        Ok(())
    }

    fn ranges(&self) -> [(&'static str, [f64; 2]); 6] {
        [
            ("heart_rate", self.heart_rate),
            ("qrs_amplitude", self.qrs_amplitude),
            ("t_wave_amplitude", self.t_wave_amplitude),
            ("baseline_wander_freq", self.baseline_wander_freq),
            ("baseline_wander_amplitude", self.baseline_wander_amplitude),
            ("noise_std", self.noise_std),
        ]
    }

    fn params_at(&self, mut pick: impl FnMut([f64; 2]) -> f64, morphology_seed: u64) -> SynthSubjectParams {
        SynthSubjectParams {
            heart_rate: pick(self.heart_rate),
            qrs_amplitude: pick(self.qrs_amplitude),
            t_wave_amplitude: pick(self.t_wave_amplitude),
            baseline_wander_freq: pick(self.baseline_wander_freq),
            baseline_wander_amplitude: pick(self.baseline_wander_amplitude),
            noise_std: pick(self.noise_std),
            morphology_seed,
            morphology_center: self.morphology_center,
            morphology_dispersion: self.morphology_dispersion,
        }
    }

    /// Subject parameters in record order, deterministic under `seed`.
    pub fn subjects(&self, seed: u64) -> Vec<CohortSubject> {
        (0..self.subjects)
            .map(|i| {
                let record_id = format!("s{i:03}");
                let mut rng = SeededRng::derive(seed, &["cohort", &self.dataset_id, &record_id]);
                let morphology_seed = rng.next_u64();
                let record_seed = rng.next_u64();
                let params = self.params_at(|[lo, hi]| rng.uniform_range(lo, hi), morphology_seed);
                CohortSubject {
                    record_id,
                    params,
                    record_seed,
                }
            })
            .collect()
    }

    pub fn generate(&self, seed: u64) -> Result<Vec<RawRecord>> {
        self.subjects(seed)
            .iter()
            .map(|s| {
                generate_synth_subject(
                    &self.dataset_id,
                    &s.record_id,
                    &s.params,
                    self.sampling_rate,
                    self.duration_s,
                    s.record_seed,
                )
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    /// Aggregated per-window observable: reconstruction error or view
    /// consistency, depending on the encoder family.
    Score,
    /// MLP on subject-level summaries of the same window scores.
    Learned,
    /// Nearest known-member distance of the mean subject embedding.
    Embedding,
}

impl AttackKind {
    pub const ALL: [AttackKind; 3] = [AttackKind::Score, AttackKind::Learned, AttackKind::Embedding];

    pub fn as_str(self) -> &'static str {
        match self {
            AttackKind::Score => "score",
            AttackKind::Learned => "learned",
            AttackKind::Embedding => "embedding",
        }
    }
}

impl std::fmt::Display for AttackKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

mod defaults {
    use crate::audit::AggregationKind;

    pub fn window_cap() -> usize {
        2000
    }
    pub fn aggregation() -> AggregationKind {
        AggregationKind::TopKMean
    }
    pub fn top_k() -> usize {
        50
    }
    pub fn alpha() -> f64 {
        0.01
    }
    pub fn nonmember_ratio() -> f64 {
        1.0
    }
    pub fn split_fractions() -> [f64; 3] {
        [0.4, 0.3, 0.3]
    }
    pub fn rec_masks() -> usize {
        8
    }
    pub fn consistency_draws() -> usize {
        8
    }
    pub fn knn_k() -> usize {
        5
    }
    pub fn embedding_window_cap() -> usize {
        2000
    }
    pub fn mlp_steps() -> usize {
        200
    }
    pub fn mlp_lr() -> f64 {
        1e-3
    }
}

/// Evaluation protocol shared by every (dataset, family, attack) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditParams {
    /// Windows sampled per subject.
    #[serde(default = "defaults::window_cap")]
    pub window_cap: usize,
    #[serde(default = "defaults::aggregation")]
    pub aggregation: AggregationKind,
    #[serde(default = "defaults::top_k")]
    pub top_k: usize,
    /// Target false-positive rate for the threshold.
    #[serde(default = "defaults::alpha")]
    pub alpha: f64,
    /// Non-members drawn per member.
    #[serde(default = "defaults::nonmember_ratio")]
    pub nonmember_ratio: f64,
    /// Attacker-train, calibration, test.
    #[serde(default = "defaults::split_fractions")]
    pub split_fractions: [f64; 3],
    /// Fixed masks per window for the reconstruction score.
    #[serde(default = "defaults::rec_masks")]
    pub rec_masks: usize,
    /// View pairs per window for the consistency score.
    #[serde(default = "defaults::consistency_draws")]
    pub consistency_draws: usize,
    #[serde(default = "defaults::knn_k")]
    pub knn_k: usize,
    /// Windows averaged into a subject embedding.
    #[serde(default = "defaults::embedding_window_cap")]
    pub embedding_window_cap: usize,
    #[serde(default = "defaults::mlp_steps")]
    pub mlp_steps: usize,
    #[serde(default = "defaults::mlp_lr")]
    pub mlp_lr: f64,
    /// Augmentation used by the consistency attacker; the encoder's training
    /// augmentation when absent.
    #[serde(default)]
    pub attacker_augment: Option<AugmentConfig>,
}

impl Default for AuditParams {
    fn default() -> Self {
        Self {
            window_cap: defaults::window_cap(),
            aggregation: defaults::aggregation(),
            top_k: defaults::top_k(),
            alpha: defaults::alpha(),
            nonmember_ratio: defaults::nonmember_ratio(),
            split_fractions: defaults::split_fractions(),
            rec_masks: defaults::rec_masks(),
            consistency_draws: defaults::consistency_draws(),
            knn_k: defaults::knn_k(),
            embedding_window_cap: defaults::embedding_window_cap(),
            mlp_steps: defaults::mlp_steps(),
            mlp_lr: defaults::mlp_lr(),
            attacker_augment: None,
        }
    }
}

impl AuditParams {
    pub fn policy(&self) -> AggregationPolicy {
        AggregationPolicy {
            kind: self.aggregation,
            k: self.top_k,
            window_cap: self.window_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("audit.{field}: {msg}")));
        for (field, v) in [
            ("window_cap", self.window_cap),
            ("top_k", self.top_k),
            ("rec_masks", self.rec_masks),
            ("consistency_draws", self.consistency_draws),
            ("knn_k", self.knn_k),
            ("embedding_window_cap", self.embedding_window_cap),
            ("mlp_steps", self.mlp_steps),
        ] {
            if v == 0 {
                return bad(field, "must be >= 1".into());
            }
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return bad("alpha", format!("must lie in [0, 1), got {}", self.alpha));
        }
        if !(self.nonmember_ratio > 0.0 && self.nonmember_ratio.is_finite()) {
            return bad("nonmember_ratio", format!("must be > 0, got {}", self.nonmember_ratio));
        }
        let f = self.split_fractions;
        if f.iter().any(|v| !(*v > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split_fractions", format!("need three positive fractions summing to 1, got {f:?}"));
        }
        if !(self.mlp_lr > 0.0 && self.mlp_lr.is_finite()) {
            return bad("mlp_lr", format!("must be > 0, got {}", self.mlp_lr));
        }
        if let Some(a) = &self.attacker_augment {
            a.validate()?;
        }
        Ok(())
    }
}

/// The complete run description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Master seed; every encoder trains under it.
    pub seed: u64,
    #[serde(default)]
    pub cohorts: Vec<CohortSpec>,
    /// Datasets whose subjects are pretraining members, one model per
    /// (dataset, family).
    pub train_datasets: Vec<String>,
    /// Members drawn from each training dataset; all of its subjects when
    /// absent.
    #[serde(default)]
    pub member_count: Option<usize>,
    pub encoders: Vec<EncoderConfig>,
    pub attacks: Vec<AttackKind>,
    #[serde(default)]
    pub audit: AuditParams,
}

impl RunConfig {
    /// Parses and validates; `seed` overrides the file's master seed.
    pub fn from_json(bytes: &[u8], seed: Option<u64>) -> Result<Self> {
        let mut cfg: RunConfig =
            serde_json::from_slice(bytes).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(seed) = seed {
            cfg.seed = seed;
        }
        cfg.sync_seeds();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, parses and validates a config file; returns it with its
    /// fingerprint.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let cfg = Self::from_json(&bytes, seed).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let fp = fingerprint(&bytes, cfg.seed);
        Ok((cfg, fp))
    }

    /// Fingerprint of the canonical serialization, for configs built in code.
    pub fn fingerprint(&self) -> Result<String> {
        Ok(fingerprint(&serde_json::to_vec(self)?, self.seed))
    }

    fn sync_seeds(&mut self) {
        for e in &mut self.encoders {
            e.seed = self.seed;
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.sync_seeds();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.cohorts {
            c.validate()?;
            if !seen.insert(c.dataset_id.as_str()) {
                return Err(Error::Config(format!("cohort {} defined twice", c.dataset_id)));
            }
        }
        if self.train_datasets.is_empty() {
            return Err(Error::Config("train_datasets: need at least one dataset".into()));
        }
        if !self.cohorts.is_empty() {
            if let Some(d) = self.train_datasets.iter().find(|d| !seen.contains(d.as_str())) {
                return Err(Error::Config(format!("train_datasets: {d} is not a defined cohort")));
            }
        }
        if self.member_count == Some(0) {
            return Err(Error::Config("member_count: must be >= 1".into()));
        }
        if self.encoders.is_empty() {
            return Err(Error::Config("encoders: need at least one encoder".into()));
        }
        let mut families = BTreeSet::new();
        for e in &self.encoders {
            e.validate()?;
            if !families.insert(e.family) {
                return Err(Error::Config(format!("encoders: {} listed twice", e.family)));
            }
        }
        if self.attacks.is_empty() {
            return Err(Error::Config("attacks: need at least one attack".into()));
        }
        self.audit.validate()
    }

    pub fn encoder(&self, family: Family) -> Option<&EncoderConfig> {
        self.encoders.iter().find(|e| e.family == family)
    }

    pub fn cohort(&self, dataset: &str) -> Option<&CohortSpec> {
        self.cohorts.iter().find(|c| c.dataset_id == dataset)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Hex SHA-256 of the config bytes followed by the effective seed.
pub fn fingerprint(config_bytes: &[u8], seed: u64) -> String {
    let mut h = Sha256::new();
    h.update(config_bytes);
    h.update(seed.to_le_bytes());
    h.finalize().iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}
