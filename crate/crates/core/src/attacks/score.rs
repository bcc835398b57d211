use crate::augment::{sample_view, AugmentConfig};
use crate::encoders::{mae_loss, Encoder, MaskPattern};
use crate::error::{Error, Result};
use crate::nn::cosine_sim;
use crate::rng::SeededRng;

/// Negative reconstruction error averaged over fixed masks; higher means
/// more member-like.
pub fn score_rec(model: &dyn Encoder, x: &[f64], masks: &[MaskPattern]) -> Result<f64> {
    if !model.family().is_mae() {
        return Err(Error::Unsupported(format!(
            "reconstruction score needs a masked-reconstruction encoder, got {}",
            model.family()
        )));
    }
    if masks.is_empty() {
        return Err(Error::InvalidArgument("reconstruction score needs at least one mask".into()));
    }
    let mut total = 0.0;
    for mask in masks {
        let x_hat = model.reconstruct(x, mask)?;
        total += mae_loss(x, &x_hat, mask)?.0;
    }
    Ok(-total / masks.len() as f64)
}

/// Mean cosine similarity between embeddings of `draws` independent view
/// pairs.
pub fn score_con(
    model: &dyn Encoder,
    x: &[f64],
    draws: usize,
    augment: &AugmentConfig,
    rng: &mut SeededRng,
) -> Result<f64> {
    if !model.family().is_contrastive() {
        return Err(Error::Unsupported(format!(
            "consistency score needs a contrastive encoder, got {}",
            model.family()
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("consistency score needs at least one draw".into()));
    }
    let mut total = 0.0;
    for _ in 0..draws {
        let a = model.encode(&sample_view(x, augment, rng))?;
        let b = model.encode(&sample_view(x, augment, rng))?;
        total += cosine_sim(&a, &b)?;
    }
    Ok(total / draws as f64)
}
