use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::metrics::{aggregate, auc, calibrate_threshold, evaluate_at_threshold};
use super::report::{AuditReport, ReportCell};
use super::split::{build_nonmember_pool, split_subjects, LabeledSubject, SubjectSplit};
use crate::attacks::{
    knn_score, mlp_score, score_con, score_rec, subject_embedding, subject_features, train_mlp_attacker,
    ReferenceSet, SubjectFeatureVector, WindowScore,
};
use crate::config::{AttackKind, RunConfig};
use crate::corpus::{SubjectId, WindowSource};
use crate::encoders::{make_fixed_masks, EncoderModel, Family};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// A pretrained encoder and the dataset its members came from.
pub struct TrainedModel {
    pub dataset: String,
    pub model: EncoderModel,
}

/// Scores behind one report cell, in subject order.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreDump {
    pub dataset: String,
    pub family: Family,
    pub attack: AttackKind,
    pub rows: Vec<WindowScore>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditOutput {
    pub report: AuditReport,
    pub dumps: Vec<ScoreDump>,
    /// Subject split used for each training dataset.
    pub splits: BTreeMap<String, SubjectSplit>,
}

/// Pretraining members of `dataset`: all of its subjects, or a seeded draw
/// of `member_count` of them.
pub fn select_members(cfg: &RunConfig, source: &dyn WindowSource, dataset: &str) -> Result<BTreeSet<SubjectId>> {
    let all: Vec<SubjectId> = source.subjects().into_iter().filter(|s| s.dataset_id == dataset).collect();
    if all.is_empty() {
        return Err(Error::InsufficientSubjects(format!("dataset {dataset} has no subjects in the corpus")));
    }
    match cfg.member_count {
        None => Ok(all.into_iter().collect()),
        Some(n) if n > all.len() => Err(Error::InsufficientSubjects(format!(
            "member_count {n} exceeds the {} subjects of {dataset}",
            all.len()
        ))),
        Some(n) => {
            let mut rng = SeededRng::derive(cfg.seed, &["members", dataset]);
            Ok(rng.sample_without_replacement(all.len(), n).into_iter().map(|i| all[i].clone()).collect())
        }
    }
}

/// Seed of the subject split for a training dataset; shared by every family
/// so cells of one dataset see the same subjects.
fn split_seed(seed: u64, dataset: &str) -> u64 {
    SeededRng::derive(seed, &["split_seed", dataset]).next_u64()
}

/// Indices of the windows queried for `subject`, ascending.
pub fn sample_window_indices(seed: u64, subject: &SubjectId, available: usize, cap: usize) -> Vec<usize> {
    let mut idx = if available > cap {
        SeededRng::derive(seed, &["windows", &subject.to_string()]).sample_without_replacement(available, cap)
    } else {
        (0..available).collect()
    };
    idx.sort_unstable();
    idx
}

struct Evaluated {
    auc: f64,
    tpr: f64,
    fpr: f64,
    adv: f64,
    threshold: f64,
    cal_fpr: f64,
}

fn evaluate(split: &SubjectSplit, scores: &BTreeMap<SubjectId, f64>, alpha: f64) -> Result<Evaluated> {
    let pick = |part: &[LabeledSubject], member: bool| -> Vec<f64> {
        part.iter().filter(|s| s.member == member).map(|s| scores[&s.subject]).collect()
    };
    let cal = calibrate_threshold(&pick(&split.calibration, false), alpha)?;
    let (m, n) = (pick(&split.test, true), pick(&split.test, false));
    let at = evaluate_at_threshold(&m, &n, cal.threshold)?;
    assert_eq!(at.adv, at.tpr - at.fpr);
    Ok(Evaluated {
        auc: auc(&m, &n)?,
        tpr: at.tpr,
        fpr: at.fpr,
        adv: at.adv,
        threshold: cal.threshold,
        cal_fpr: cal.achieved_fpr,
    })
}

/// Per-window score of the family's score-only observable.
fn window_scores(
    cfg: &RunConfig,
    model: &EncoderModel,
    source: &dyn WindowSource,
    subjects: &[SubjectId],
) -> Result<Vec<Vec<(usize, f64)>>> {
    let enc = model.config();
    let audit = &cfg.audit;
    let masks = if enc.family.is_mae() {
        make_fixed_masks(audit.rec_masks, enc.patch_count(), enc.patch_len, enc.mask_ratio, cfg.seed)
    } else {
        Vec::new()
    };
    let augment = audit.attacker_augment.as_ref().unwrap_or(&enc.augment);
    subjects
        .iter()
        .map(|s| {
            let windows = source.windows_of(s);
            let idx = sample_window_indices(cfg.seed, s, windows.len(), audit.window_cap);
            idx.par_iter()
                .map(|&i| {
                    let v = if enc.family.is_mae() {
                        score_rec(model, windows[i], &masks)?
                    } else {
                        let mut rng = SeededRng::derive(
                            cfg.seed,
                            &["consistency", enc.family.as_str(), &s.to_string(), &i.to_string()],
                        );
                        score_con(model, windows[i], audit.consistency_draws, augment, &mut rng)?
                    };
                    Ok((i, v))
                })
                .collect()
        })
        .collect()
}

fn subject_embeddings(
    cfg: &RunConfig,
    model: &EncoderModel,
    source: &dyn WindowSource,
    subjects: &[SubjectId],
) -> Result<BTreeMap<SubjectId, Vec<f64>>> {
    subjects
        .iter()
        .map(|s| {
            let windows = source.windows_of(s);
            let idx = sample_window_indices(cfg.seed, s, windows.len(), cfg.audit.window_cap);
            let chosen: Vec<&[f64]> = idx.iter().map(|&i| windows[i]).collect();
            let mut rng = SeededRng::derive(cfg.seed, &["embedding", &s.to_string()]);
            let z = subject_embedding(model, &chosen, cfg.audit.embedding_window_cap, &mut rng)?;
            Ok((s.clone(), z))
        })
        .collect()
}

/// Runs every configured attack against every (training dataset, family)
/// model and evaluates them under one subject split per dataset.
pub fn run_audit(
    cfg: &RunConfig,
    fingerprint: &str,
    source: &dyn WindowSource,
    models: &[TrainedModel],
) -> Result<AuditOutput> {
    let all = source.subjects();
    let known: BTreeSet<&SubjectId> = all.iter().collect();
    let attacks: BTreeSet<AttackKind> = cfg.attacks.iter().copied().collect();
    let mut cells = Vec::new();
    let mut dumps = Vec::new();
    let mut splits = BTreeMap::new();
    for dataset in &cfg.train_datasets {
        let mut split: Option<SubjectSplit> = None;
        for enc in &cfg.encoders {
            let trained = models
                .iter()
                .find(|m| &m.dataset == dataset && m.model.config().family == enc.family)
                .ok_or_else(|| {
                    Error::InvalidArgument(format!("no pretrained {} model for dataset {dataset}", enc.family))
                })?;
            let model = &trained.model;
            let members: Vec<SubjectId> = model.train_subjects().iter().cloned().collect();
            if let Some(s) = members.iter().find(|s| !known.contains(s) || &s.dataset_id != dataset) {
                return Err(Error::InvalidArgument(format!(
                    "{} model for {dataset} lists member {s} that is not a {dataset} subject in the corpus",
                    enc.family
                )));
            }
            let split = match &split {
                Some(s) => s.clone(),
                None => {
                    let nonmembers =
                        build_nonmember_pool(&all, dataset, members.len(), cfg.audit.nonmember_ratio, cfg.seed)?;
                    let s = split_subjects(&members, &nonmembers, cfg.audit.split_fractions, split_seed(cfg.seed, dataset))
                        .map_err(|e| match e {
                            Error::InsufficientSubjects(msg) => {
                                Error::InsufficientSubjects(format!("dataset {dataset}: {msg}"))
                            }
                            other => other,
                        })?;
                    split = Some(s.clone());
                    s
                }
            };
            let labeled: Vec<&LabeledSubject> = split.parts().into_iter().flatten().collect();
            let subjects: Vec<SubjectId> = labeled.iter().map(|l| l.subject.clone()).collect::<BTreeSet<_>>().into_iter().collect();

            let mut push = |attack: AttackKind, scores: &BTreeMap<SubjectId, f64>, rows: Vec<WindowScore>| -> Result<()> {
                let e = evaluate(&split, scores, cfg.audit.alpha)?;
                cells.push(ReportCell {
                    dataset: dataset.clone(),
                    family: enc.family,
                    attack,
                    auc: e.auc,
                    tpr_at_alpha: e.tpr,
                    fpr: e.fpr,
                    adv: e.adv,
                    threshold: e.threshold,
                    cal_fpr: e.cal_fpr,
                    config_fingerprint: fingerprint.to_string(),
                });
                dumps.push(ScoreDump {
                    dataset: dataset.clone(),
                    family: enc.family,
                    attack,
                    rows,
                });
                Ok(())
            };

            if attacks.contains(&AttackKind::Score) || attacks.contains(&AttackKind::Learned) {
                let per_window = window_scores(cfg, model, source, &subjects)?;
                let policy = cfg.audit.policy();
                let rows: Vec<WindowScore> = subjects
                    .iter()
                    .zip(&per_window)
                    .flat_map(|(s, ws)| {
                        ws.iter().map(|&(i, value)| WindowScore {
                            subject: s.clone(),
                            window_index: Some(i),
                            value,
                        })
                    })
                    .collect();
                let values: BTreeMap<SubjectId, Vec<f64>> = subjects
                    .iter()
                    .zip(&per_window)
                    .map(|(s, ws)| (s.clone(), ws.iter().map(|w| w.1).collect()))
                    .collect();
                if attacks.contains(&AttackKind::Score) {
                    let scores = values
                        .iter()
                        .map(|(s, v)| Ok((s.clone(), aggregate(v, &policy)?)))
                        .collect::<Result<BTreeMap<_, _>>>()?;
                    push(AttackKind::Score, &scores, rows.clone())?;
                }
                if attacks.contains(&AttackKind::Learned) {
                    let features = values
                        .iter()
                        .map(|(s, v)| Ok((s.clone(), subject_features(v)?)))
                        .collect::<Result<BTreeMap<SubjectId, SubjectFeatureVector>>>()?;
                    let train: Vec<SubjectFeatureVector> =
                        split.attacker_train.iter().map(|l| features[&l.subject]).collect();
                    let labels: Vec<bool> = split.attacker_train.iter().map(|l| l.member).collect();
                    let seed = SeededRng::derive(cfg.seed, &["mlp", dataset, enc.family.as_str()]).next_u64();
                    let (attacker, _) =
                        train_mlp_attacker(&train, &labels, cfg.audit.mlp_lr, cfg.audit.mlp_steps, seed)?;
                    let scores: BTreeMap<SubjectId, f64> =
                        features.iter().map(|(s, v)| (s.clone(), mlp_score(&attacker, v))).collect();
                    let rows = scores
                        .iter()
                        .map(|(s, &value)| WindowScore {
                            subject: s.clone(),
                            window_index: None,
                            value,
                        })
                        .collect();
                    push(AttackKind::Learned, &scores, rows)?;
                }
            }
            if attacks.contains(&AttackKind::Embedding) {
                let z = subject_embeddings(cfg, model, source, &subjects)?;
                let refs = ReferenceSet::new(
                    split
                        .attacker_train
                        .iter()
                        .filter(|l| l.member)
                        .map(|l| (l.subject.clone(), z[&l.subject].clone()))
                        .collect(),
                )?;
                // a lone reference cannot score itself; only attacker-train subjects hit this
                let scores = z
                    .iter()
                    .filter(|(s, _)| !(refs.len() == 1 && refs.entries()[0].0 == **s))
                    .map(|(s, v)| Ok((s.clone(), knn_score(v, &refs, cfg.audit.knn_k, Some(s))?)))
                    .collect::<Result<BTreeMap<_, _>>>()?;
                let rows = scores
                    .iter()
                    .map(|(s, &value)| WindowScore {
                        subject: s.clone(),
                        window_index: None,
                        value,
                    })
                    .collect();
                push(AttackKind::Embedding, &scores, rows)?;
            }
        }
        if let Some(s) = split {
            splits.insert(dataset.clone(), s);
        }
    }
    Ok(AuditOutput {
        report: AuditReport::new(fingerprint.to_string(), cells),
        dumps,
        splits,
    })
}

