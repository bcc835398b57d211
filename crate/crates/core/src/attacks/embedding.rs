use rayon::prelude::*;

use crate::corpus::SubjectId;
use crate::encoders::Encoder;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

/// Mean embedding of up to `cap` windows, drawn uniformly without
/// replacement when the subject has more.
pub fn subject_embedding(
    model: &dyn Encoder,
    windows: &[&[f64]],
    cap: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if windows.is_empty() || cap == 0 {
        return Err(Error::InvalidArgument("subject embedding needs at least one window".into()));
    }
    let mut chosen: Vec<usize> = if windows.len() > cap {
        rng.sample_without_replacement(windows.len(), cap)
    } else {
        (0..windows.len()).collect()
    };
    chosen.sort_unstable();
    let embeddings = chosen
        .par_iter()
        .map(|&i| model.encode(windows[i]))
        .collect::<Result<Vec<_>>>()?;
    let mut mean = vec![0.0; model.embedding_dim()];
    for e in &embeddings {
        for (m, v) in mean.iter_mut().zip(e) {
            *m += v;
        }
    }
    let inv = 1.0 / embeddings.len() as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    Ok(mean)
}

/// Subject-level embeddings of known members.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReferenceSet {
    entries: Vec<(SubjectId, Vec<f64>)>,
}

impl ReferenceSet {
    pub fn new(entries: Vec<(SubjectId, Vec<f64>)>) -> Result<Self> {
        if let Some((first, rest)) = entries.split_first() {
            let dim = first.1.len();
            if let Some((s, z)) = rest.iter().find(|(_, z)| z.len() != dim) {
                return Err(Error::InvalidArgument(format!(
                    "reference embedding of {s} has dimension {}, expected {dim}",
                    z.len()
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(SubjectId, Vec<f64>)] {
        &self.entries
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Negative mean distance to the `k` nearest references, skipping entries
/// belonging to `exclude`.
pub fn knn_score(
    z: &[f64],
    refs: &ReferenceSet,
    k: usize,
    exclude: Option<&SubjectId>,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("kNN needs k >= 1".into()));
    }
    let mut dists = Vec::with_capacity(refs.len());
    for (subject, r) in refs.entries() {
        if Some(subject) == exclude {
            continue;
        }
        if r.len() != z.len() {
            return Err(Error::InvalidArgument(format!(
                "query has dimension {}, references {}",
                z.len(),
                r.len()
            )));
        }
        dists.push(euclidean(z, r));
    }
    if dists.is_empty() {
        return Err(Error::InsufficientSubjects("kNN reference set is empty".into()));
    }
    dists.sort_by(f64::total_cmp);
    let used = k.min(dists.len());
    Ok(-dists[..used].iter().sum::<f64>() / used as f64)
}
