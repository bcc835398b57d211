use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::sample_view;
use crate::corpus::{SubjectId, WindowSource};
use crate::error::{Error, Result};
use crate::nn::{adam_step, clip_global_norm, Tensor};
use crate::rng::SeededRng;

use super::config::{EncoderConfig, Family};
use super::losses::{info_nce_loss, mae_loss, ts2vec_loss};
use super::masks::MaskPattern;
use super::model::EncoderModel;

/// Per-epoch mean training loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epoch_loss: Vec<f64>,
    pub steps: u64,
}

fn sum_in_order(parts: Vec<Vec<Tensor>>, model: &EncoderModel) -> Result<Vec<Tensor>> {
    let mut total = model.params().zero_grads();
    for part in parts {
        for (acc, g) in total.iter_mut().zip(&part) {
            acc.add_assign(g)?;
        }
    }
    Ok(total)
}

fn row(t: &Tensor, i: usize) -> Result<Tensor> {
    let d = t.shape()[1];
    Tensor::new(vec![1, d], t.data()[i * d..(i + 1) * d].to_vec())
}

fn stack(rows: impl Iterator<Item = Tensor>, d: usize) -> Result<Tensor> {
    let data: Vec<f64> = rows.flat_map(Tensor::into_data).collect();
    Tensor::new(vec![data.len() / d, d], data)
}

/// Contrastive loss over paired views and its parameter gradients.
pub fn contrastive_batch_loss(
    model: &EncoderModel,
    view1: &[Vec<f64>],
    view2: &[Vec<f64>],
) -> Result<(f64, Vec<Tensor>)> {
    let cfg = model.config();
    if !cfg.family.is_contrastive() {
        return Err(Error::Unsupported(format!("{} is not contrastive", cfg.family)));
    }
    if view1.len() != view2.len() || view1.is_empty() {
        return Err(Error::InvalidArgument("contrastive batch needs equal, non-empty view lists".into()));
    }
    let forward = view1
        .par_iter()
        .zip(view2)
        .map(|(a, b)| Ok((model.contrastive_forward(a)?, model.contrastive_forward(b)?)))
        .collect::<Result<Vec<_>>>()?;
    let levels = forward[0].0 .0.len();
    let d = cfg.embedding_dim;
    let mut per_level = Vec::with_capacity(levels);
    for r in 0..levels {
        per_level.push((
            stack(forward.iter().map(|f| f.0 .0[r].clone()), d)?,
            stack(forward.iter().map(|f| f.1 .0[r].clone()), d)?,
        ));
    }
    let (loss, parts) = match cfg.family {
        Family::Ts2vec => ts2vec_loss(&per_level, cfg.temperature)?,
        _ => {
            let part = info_nce_loss(&per_level[0].0, &per_level[0].1, cfg.temperature)?;
            (part.loss, vec![part])
        }
    };
    let per_sample = forward
        .par_iter()
        .enumerate()
        .map(|(i, ((_, c1), (_, c2)))| {
            let mut grads = model.params().zero_grads();
            let g1 = parts.iter().map(|p| row(&p.grad_view1, i)).collect::<Result<Vec<_>>>()?;
            let g2 = parts.iter().map(|p| row(&p.grad_view2, i)).collect::<Result<Vec<_>>>()?;
            model.contrastive_backward(c1, &g1, &mut grads)?;
            model.contrastive_backward(c2, &g2, &mut grads)?;
            Ok(grads)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((loss, sum_in_order(per_sample, model)?))
}

/// Mean masked-reconstruction loss over a batch and its parameter gradients.
pub fn mae_batch_loss(
    model: &EncoderModel,
    xs: &[&[f64]],
    masks: &[MaskPattern],
) -> Result<(f64, Vec<Tensor>)> {
    if xs.len() != masks.len() || xs.is_empty() {
        return Err(Error::InvalidArgument("mae batch needs one mask per window".into()));
    }
    let scale = 1.0 / xs.len() as f64;
    let per_sample = xs
        .par_iter()
        .zip(masks)
        .map(|(x, mask)| {
            let (x_hat, cache) = model.reconstruct_forward(x, mask)?;
            let (loss, mut g) = mae_loss(x, &x_hat, mask)?;
            g.iter_mut().for_each(|v| *v *= scale);
            let mut grads = model.params().zero_grads();
            model.reconstruct_backward(&cache, &g, &mut grads)?;
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let loss = per_sample.iter().map(|(l, _)| l).sum::<f64>() * scale;
    let grads = sum_in_order(per_sample.into_iter().map(|(_, g)| g).collect(), model)?;
    Ok((loss, grads))
}

/// Minibatch Adam on the family's objective over the windows of
/// `train_subjects`; no other subject's windows are read.
pub fn pretrain(
    cfg: &EncoderConfig,
    source: &dyn WindowSource,
    train_subjects: &BTreeSet<SubjectId>,
) -> Result<(EncoderModel, TrainingLog)> {
    if train_subjects.is_empty() {
        return Err(Error::InsufficientSubjects("pretraining needs at least one subject".into()));
    }
    let known: BTreeSet<SubjectId> = source.subjects().into_iter().collect();
    if let Some(missing) = train_subjects.iter().find(|s| !known.contains(s)) {
        return Err(Error::InvalidArgument(format!(
            "training subject {missing} is not in the corpus"
        )));
    }
    let windows: Vec<&[f64]> = train_subjects
        .iter()
        .flat_map(|s| source.windows_of(s))
        .collect();
    if windows.is_empty() {
        return Err(Error::InsufficientSubjects(
            "training subjects have no windows".into(),
        ));
    }
    let mut model = EncoderModel::init(cfg)?;
    let mut log = TrainingLog::default();
    let patch_count = cfg.patch_count();
    let masked = cfg.masked_patch_count();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        SeededRng::derive(cfg.seed, &["pretrain", "shuffle", &epoch.to_string()]).shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let rng_for = |i: usize| {
                SeededRng::derive(
                    cfg.seed,
                    &["pretrain", "sample", &epoch.to_string(), &step.to_string(), &i.to_string()],
                )
            };
            let (loss, mut grads) = if cfg.family.is_contrastive() {
                let (v1, v2): (Vec<_>, Vec<_>) = chunk
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let mut rng = rng_for(i);
                        let a = sample_view(windows[w], &cfg.augment, &mut rng);
                        let b = sample_view(windows[w], &cfg.augment, &mut rng);
                        (a, b)
                    })
                    .unzip();
                contrastive_batch_loss(&model, &v1, &v2)?
            } else {
                let xs: Vec<&[f64]> = chunk.iter().map(|&w| windows[w]).collect();
                let masks: Vec<MaskPattern> = (0..chunk.len())
                    .map(|i| MaskPattern::random(patch_count, cfg.patch_len, masked, &mut rng_for(i)))
                    .collect();
                mae_batch_loss(&model, &xs, &masks)?
            };
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "{} pretraining diverged at epoch {epoch}, step {step}",
                    cfg.family
                )));
            }
            clip_global_norm(&mut grads, cfg.clip_threshold)?;
            adam_step(model.params_mut(), &grads, cfg.lr)?;
            total += loss;
            batches += 1;
            log.steps += 1;
        }
        let mean = total / batches as f64;
        log::info!("{} epoch {}: mean loss {mean:.6}", cfg.family, epoch + 1);
        log.epoch_loss.push(mean);
    }
    model.set_train_subjects(train_subjects.clone());
    Ok((model, log))
}
