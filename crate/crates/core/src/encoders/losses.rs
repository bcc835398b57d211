use crate::error::{Error, Result};
use crate::nn::ops::{dot, l2_norm};
use crate::nn::Tensor;

use super::masks::MaskPattern;

/// Norm floor when normalising embeddings.
const NORM_FLOOR: f64 = 1e-12;

/// Loss value with gradients for both views' embeddings.
#[derive(Clone, Debug)]
pub struct PairLoss {
    pub loss: f64,
    pub grad_view1: Tensor,
    pub grad_view2: Tensor,
}

fn check_views(view1: &Tensor, view2: &Tensor) -> Result<(usize, usize)> {
    if view1.rank() != 2 || view1.shape() != view2.shape() {
        return Err(Error::Shape {
            layer: "info_nce",
            expected: "two (B, D) embedding matrices of equal shape".into(),
            got: view1.shape().to_vec(),
        });
    }
    let (b, d) = (view1.shape()[0], view1.shape()[1]);
    if b == 0 {
        return Err(Error::InvalidArgument("info_nce: batch size is 0".into()));
    }
    if !view1.is_finite() || !view2.is_finite() {
        return Err(Error::Numerical("info_nce: non-finite embedding".into()));
    }
    Ok((b, d))
}

/// InfoNCE over the stacked views `[view1; view2]`, where row `i` is paired
/// with row `i ± B`.
pub fn info_nce_loss(view1: &Tensor, view2: &Tensor, temperature: f64) -> Result<PairLoss> {
    let (b, d) = check_views(view1, view2)?;
    if !(temperature > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "info_nce: temperature must be > 0, got {temperature}"
        )));
    }
    let n = 2 * b;
    let rows: Vec<&[f64]> = view1
        .data()
        .chunks(d)
        .chain(view2.data().chunks(d))
        .collect();
    let norms: Vec<f64> = rows.iter().map(|r| l2_norm(r).max(NORM_FLOOR)).collect();
    let unit: Vec<Vec<f64>> = rows
        .iter()
        .zip(&norms)
        .map(|(r, &nrm)| r.iter().map(|v| v / nrm).collect())
        .collect();
    let pair = |i: usize| if i < b { i + b } else { i - b };

    let mut sim = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sim[i * n + j] = dot(&unit[i], &unit[j]) / temperature;
        }
    }

    // coef[i][j] = dL/dsim_ij
    let mut loss = 0.0;
    let mut coef = vec![0.0; n * n];
    let scale = 1.0 / n as f64;
    for i in 0..n {
        let row = &sim[i * n..(i + 1) * n];
        let max = (0..n)
            .filter(|&j| j != i)
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&j| j != i).map(|j| (row[j] - max).exp()).sum();
        let lse = max + denom.ln();
        loss += lse - row[pair(i)];
        for j in (0..n).filter(|&j| j != i) {
            coef[i * n + j] = scale * (row[j] - max).exp() / denom;
        }
        coef[i * n + pair(i)] -= scale;
    }
    loss *= scale;

    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        let mut gu = vec![0.0; d];
        for j in 0..n {
            let c = (coef[i * n + j] + coef[j * n + i]) / temperature;
            if c != 0.0 {
                for (g, u) in gu.iter_mut().zip(&unit[j]) {
                    *g += c * u;
                }
            }
        }
        let radial = dot(&gu, &unit[i]);
        for (k, g) in grad[i * d..(i + 1) * d].iter_mut().enumerate() {
            *g = (gu[k] - radial * unit[i][k]) / norms[i];
        }
    }
    let grad_view2 = grad.split_off(b * d);
    Ok(PairLoss {
        loss,
        grad_view1: Tensor::new(vec![b, d], grad)?,
        grad_view2: Tensor::new(vec![b, d], grad_view2)?,
    })
}

/// Mean of the per-resolution InfoNCE losses; gradients are returned per
/// resolution in the input order.
pub fn ts2vec_loss(per_resolution: &[(Tensor, Tensor)], temperature: f64) -> Result<(f64, Vec<PairLoss>)> {
    if per_resolution.is_empty() {
        return Err(Error::InvalidArgument("ts2vec: need at least one resolution".into()));
    }
    let r = per_resolution.len() as f64;
    let mut total = 0.0;
    let mut parts = Vec::with_capacity(per_resolution.len());
    for (v1, v2) in per_resolution {
        let mut part = info_nce_loss(v1, v2, temperature)?;
        total += part.loss;
        part.grad_view1.scale(1.0 / r);
        part.grad_view2.scale(1.0 / r);
        parts.push(part);
    }
    Ok((total / r, parts))
}

/// Max-pools a `(N, C, L)` feature map with kernel and stride `2^level`,
/// then averages over time, giving `(N, C)`.
pub fn pool_resolution(feature_map: &Tensor, level: usize) -> Result<Tensor> {
    if feature_map.rank() != 3 {
        return Err(Error::Shape {
            layer: "pool_resolution",
            expected: "(N, C, L)".into(),
            got: feature_map.shape().to_vec(),
        });
    }
    let (n, c, l) = (feature_map.shape()[0], feature_map.shape()[1], feature_map.shape()[2]);
    let k = 1usize << level;
    if l < k {
        return Err(Error::Shape {
            layer: "pool_resolution",
            expected: format!("length >= {k}"),
            got: feature_map.shape().to_vec(),
        });
    }
    let out_len = (l - k) / k + 1;
    let mut out = Vec::with_capacity(n * c);
    for row in feature_map.data().chunks(l) {
        let sum: f64 = (0..out_len)
            .map(|t| row[t * k..t * k + k].iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .sum();
        out.push(sum / out_len as f64);
    }
    Tensor::new(vec![n, c], out)
}

/// Mean squared error over masked samples, with its gradient wrt `x_hat`.
pub fn mae_loss(x: &[f64], x_hat: &[f64], mask: &MaskPattern) -> Result<(f64, Vec<f64>)> {
    if x.len() != x_hat.len() || x.len() != mask.sample_len() {
        return Err(Error::InvalidArgument(format!(
            "mae_loss: lengths differ (x {}, x_hat {}, mask covers {})",
            x.len(),
            x_hat.len(),
            mask.sample_len()
        )));
    }
    let count = mask.masked_samples();
    if count == 0 {
        return Err(Error::InvalidArgument("mae_loss: mask hides no patch".into()));
    }
    let inv = 1.0 / count as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; x.len()];
    for (p, &hidden) in mask.patches().iter().enumerate() {
        if !hidden {
            continue;
        }
        for i in p * mask.patch_len()..(p + 1) * mask.patch_len() {
            let e = x_hat[i] - x[i];
            loss += e * e;
            grad[i] = 2.0 * e * inv;
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::finite_diff_check;
    use crate::rng::SeededRng;

    fn random(shape: &[usize], rng: &mut SeededRng) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    }

    /// Direct evaluation of the InfoNCE formula.
    fn brute_force(v1: &[Vec<f64>], v2: &[Vec<f64>], tau: f64) -> f64 {
        let z: Vec<&Vec<f64>> = v1.iter().chain(v2).collect();
        let n = z.len();
        let b = n / 2;
        let cos = |a: &[f64], c: &[f64]| {
            let ab: f64 = a.iter().zip(c).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nc: f64 = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            ab / (na * nc)
        };
        let mut total = 0.0;
        for i in 0..n {
            let p = (i + b) % n;
            let num = (cos(z[i], z[p]) / tau).exp();
            let den: f64 = (0..n).filter(|&j| j != i).map(|j| (cos(z[i], z[j]) / tau).exp()).sum();
            total += (num / den).ln();
        }
        -total / n as f64
    }

    fn tensor(rows: &[Vec<f64>]) -> Tensor {
        Tensor::new(vec![rows.len(), rows[0].len()], rows.concat()).unwrap()
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let mut rng = SeededRng::new(3, 0);
        for tau in [0.05, 0.2, 1.0, 7.0] {
            let out = info_nce_loss(&random(&[1, 5], &mut rng), &random(&[1, 5], &mut rng), tau).unwrap();
            assert_eq!(out.loss, 0.0);
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let z = Tensor::zeros(&[0, 4]);
        assert!(info_nce_loss(&z, &z, 0.2).is_err());
    }

    #[test]
    fn hand_chosen_batch_matches_brute_force() {
        let v1 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0]];
        let v2 = vec![vec![2.0, 0.0, 0.0], vec![0.0, 0.0, 1.0]];
        let got = info_nce_loss(&tensor(&v1), &tensor(&v2), 0.2).unwrap().loss;
        assert!((got - brute_force(&v1, &v2, 0.2)).abs() < 1e-10);
        // By hand: rows 0 and 2 are parallel, rows 1 and 3 orthogonal to all.
        let e = (1.0f64 / 0.2).exp();
        let l0 = -(e / (2.0 + e)).ln();
        let l1 = -(1.0f64 / 3.0).ln();
        assert!((got - (2.0 * l0 + 2.0 * l1) / 4.0).abs() < 1e-10);
    }

    #[test]
    fn random_batches_match_brute_force() {
        let mut rng = SeededRng::new(4, 0);
        for _ in 0..10 {
            let v1: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
            let v2: Vec<Vec<f64>> = (0..4).map(|_| (0..6).map(|_| rng.normal()).collect()).collect();
            let got = info_nce_loss(&tensor(&v1), &tensor(&v2), 0.3).unwrap().loss;
            assert!((got - brute_force(&v1, &v2, 0.3)).abs() < 1e-10);
        }
    }

    #[test]
    fn info_nce_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(5, 0);
        let params = vec![random(&[3, 8], &mut rng), random(&[3, 8], &mut rng)];
        let err = finite_diff_check(
            |p| {
                let out = info_nce_loss(&p[0], &p[1], 0.2).unwrap();
                (out.loss, vec![out.grad_view1, out.grad_view2])
            },
            &params,
            usize::MAX,
            &mut rng,
        );
        assert!(err < 1e-4, "rel error {err}");
    }

    #[test]
    fn rescaling_embeddings_leaves_loss_unchanged() {
        let mut rng = SeededRng::new(6, 0);
        let (v1, v2) = (random(&[4, 5], &mut rng), random(&[4, 5], &mut rng));
        let base = info_nce_loss(&v1, &v2, 0.2).unwrap().loss;
        for s in [0.5, 3.0] {
            let (mut a, mut b) = (v1.clone(), v2.clone());
            a.scale(s);
            b.scale(s);
            assert!((info_nce_loss(&a, &b, 0.2).unwrap().loss - base).abs() < 1e-10);
        }
    }

    #[test]
    fn single_resolution_reduces_to_info_nce() {
        let mut rng = SeededRng::new(7, 0);
        let (v1, v2) = (random(&[3, 4], &mut rng), random(&[3, 4], &mut rng));
        let (loss, _) = ts2vec_loss(&[(v1.clone(), v2.clone())], 0.2).unwrap();
        assert_eq!(loss, info_nce_loss(&v1, &v2, 0.2).unwrap().loss);
        assert!(ts2vec_loss(&[], 0.2).is_err());
    }

    #[test]
    fn two_resolutions_average_brute_force_levels() {
        // Feature maps (B=2, C=2, L=4) per view.
        let fm1 = Tensor::new(
            vec![2, 2, 4],
            vec![1.0, 3.0, 0.0, 2.0, 0.5, 0.5, 4.0, 1.0, 2.0, 0.0, 1.0, 1.0, 0.0, 3.0, 2.0, 5.0],
        )
        .unwrap();
        let fm2 = Tensor::new(
            vec![2, 2, 4],
            vec![2.0, 1.0, 1.0, 0.0, 0.0, 2.0, 3.0, 3.0, 1.0, 1.0, 4.0, 0.0, 2.0, 2.0, 0.0, 1.0],
        )
        .unwrap();
        // Level 0 is the plain time mean; level 1 averages maxima of pairs.
        let by_hand = |fm: &Tensor, level: usize| -> Vec<Vec<f64>> {
            fm.data()
                .chunks(8)
                .map(|s| {
                    s.chunks(4)
                        .map(|r| match level {
                            0 => r.iter().sum::<f64>() / 4.0,
                            _ => (r[0].max(r[1]) + r[2].max(r[3])) / 2.0,
                        })
                        .collect()
                })
                .collect()
        };
        let mut levels = Vec::new();
        let mut expected = 0.0;
        for level in 0..2 {
            let (a, b) = (pool_resolution(&fm1, level).unwrap(), pool_resolution(&fm2, level).unwrap());
            assert_eq!(a, tensor(&by_hand(&fm1, level)));
            expected += brute_force(&by_hand(&fm1, level), &by_hand(&fm2, level), 0.2) / 2.0;
            levels.push((a, b));
        }
        let (loss, _) = ts2vec_loss(&levels, 0.2).unwrap();
        assert!((loss - expected).abs() < 1e-10);
    }

    #[test]
    fn ts2vec_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(8, 0);
        let params: Vec<Tensor> = (0..4).map(|_| random(&[3, 4], &mut rng)).collect();
        let err = finite_diff_check(
            |p| {
                let (loss, parts) =
                    ts2vec_loss(&[(p[0].clone(), p[1].clone()), (p[2].clone(), p[3].clone())], 0.5).unwrap();
                let grads = parts.into_iter().flat_map(|g| [g.grad_view1, g.grad_view2]).collect();
                (loss, grads)
            },
            &params,
            usize::MAX,
            &mut rng,
        );
        assert!(err < 1e-4, "rel error {err}");
    }

    #[test]
    fn mae_loss_cases() {
        let mask = MaskPattern::new(2, vec![true, false, true]).unwrap();
        let x = vec![1.0; 6];
        assert_eq!(mae_loss(&x, &x, &mask).unwrap().0, 0.0);
        assert_eq!(mae_loss(&x, &[0.0; 6], &mask).unwrap().0, 1.0);
        let none = MaskPattern::new(2, vec![false; 3]).unwrap();
        assert!(mae_loss(&x, &x, &none).is_err());
        assert!(mae_loss(&x, &[0.0; 5], &mask).is_err());
    }

    #[test]
    fn mae_loss_matches_explicit_loop() {
        let mut rng = SeededRng::new(9, 0);
        for _ in 0..20 {
            let mask = MaskPattern::random(40, 50, 20, &mut rng);
            let x: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
            let xh: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
            let mut sum = 0.0;
            let mut count = 0;
            for i in 0..2000 {
                if mask.is_sample_masked(i) {
                    sum += (xh[i] - x[i]).powi(2);
                    count += 1;
                }
            }
            assert!((mae_loss(&x, &xh, &mask).unwrap().0 - sum / count as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn mae_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(10, 0);
        let mask = MaskPattern::random(8, 5, 3, &mut rng);
        let x: Vec<f64> = (0..40).map(|_| rng.normal()).collect();
        let params = vec![random(&[40], &mut rng)];
        let err = finite_diff_check(
            |p| {
                let (l, g) = mae_loss(&x, p[0].data(), &mask).unwrap();
                (l, vec![Tensor::from_vec(g)])
            },
            &params,
            usize::MAX,
            &mut rng,
        );
        assert!(err < 1e-4, "rel error {err}");
    }
}
