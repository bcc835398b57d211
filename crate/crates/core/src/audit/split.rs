use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::corpus::SubjectId;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const SPLIT_NAMES: [&str; 3] = ["attacker-train", "calibration", "test"];

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LabeledSubject {
    pub subject: SubjectId,
    pub member: bool,
}

/// Three disjoint subject sets, each holding both labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub attacker_train: Vec<LabeledSubject>,
    pub calibration: Vec<LabeledSubject>,
    pub test: Vec<LabeledSubject>,
}

impl SubjectSplit {
    pub fn parts(&self) -> [&[LabeledSubject]; 3] {
        [&self.attacker_train, &self.calibration, &self.test]
    }
}

/// Per-split counts for `n` items: floors of `n * f`, then the leftover
/// units go to the largest fractional parts (earlier split on ties).
pub fn largest_remainder(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    counts
}

/// Stratified seeded split into attacker-train, calibration and test.
pub fn split_subjects(
    members: &[SubjectId],
    nonmembers: &[SubjectId],
    fractions: [f64; 3],
    seed: u64,
) -> Result<SubjectSplit> {
    if fractions.iter().any(|f| !(*f > 0.0)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let m: BTreeSet<&SubjectId> = members.iter().collect();
    if let Some(s) = nonmembers.iter().find(|s| m.contains(s)) {
        return Err(Error::InvalidArgument(format!("{s} is labeled both member and non-member")));
    }
    let mut parts: [Vec<LabeledSubject>; 3] = Default::default();
    for (label, group, name) in [(true, members, "member"), (false, nonmembers, "non-member")] {
        let mut pool: Vec<SubjectId> = group.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        SeededRng::derive(seed, &["split", name]).shuffle(&mut pool);
        let counts = largest_remainder(pool.len(), fractions);
        if let Some(i) = counts.iter().position(|&c| c == 0) {
            return Err(Error::InsufficientSubjects(format!(
                "{} split gets no {name} subjects ({} available)",
                SPLIT_NAMES[i],
                pool.len()
            )));
        }
        let mut rest = pool.into_iter();
        for (part, count) in parts.iter_mut().zip(counts) {
            part.extend(rest.by_ref().take(count).map(|subject| LabeledSubject { subject, member: label }));
        }
    }
    for p in &mut parts {
        p.sort();
    }
    let [attacker_train, calibration, test] = parts;
    Ok(SubjectSplit {
        attacker_train,
        calibration,
        test,
    })
}

/// Seeded draw of `round(ratio * member_count)` subjects (capped by what is
/// available) from datasets other than `train_dataset`.
pub fn build_nonmember_pool(
    subjects: &[SubjectId],
    train_dataset: &str,
    member_count: usize,
    ratio: f64,
    seed: u64,
) -> Result<Vec<SubjectId>> {
    let candidates: Vec<SubjectId> = subjects
        .iter()
        .filter(|s| s.dataset_id != train_dataset)
        .cloned()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if candidates.is_empty() {
        return Err(Error::InsufficientSubjects(format!(
            "no subjects outside {train_dataset} to draw non-members from"
        )));
    }
    let wanted = ((ratio * member_count as f64).round() as usize).min(candidates.len());
    let mut rng = SeededRng::derive(seed, &["nonmember_pool", train_dataset]);
    let mut picked: Vec<SubjectId> = rng
        .sample_without_replacement(candidates.len(), wanted)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect();
    picked.sort();
    Ok(picked)
}
