//! Dense helpers shared by the layers and encoder graphs.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm below which a vector has no usable direction.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// `a (m×k) · b (k×n)`.
pub fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `a (m×k) · bᵀ` where `b` is `n×k`.
pub fn mm_bt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = dot(ar, &b[j * k..(j + 1) * k]);
        }
    }
    out
}

/// `aᵀ · b` where `a` is `r×m` and `b` is `r×n`; result `m×n`.
pub fn mm_at(a: &[f64], r: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for row in 0..r {
        let ar = &a[row * m..(row + 1) * m];
        let br = &b[row * n..(row + 1) * n];
        for (i, &av) in ar.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(br) {
                *o += av * bv;
            }
        }
    }
    out
}

/// Inner product with four interleaved partial sums, so the loop vectorises.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

pub fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; 0 when either vector is (numerically) zero.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "cosine_sim: length mismatch {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        log::warn!("cosine_sim: degenerate direction (norms {na:e}, {nb:e}); returning 0");
        return Ok(0.0);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Swap the last two axes of a rank-3 tensor.
pub fn transpose_last2(x: &Tensor) -> Result<Tensor> {
    let &[n, a, b] = x.shape() else {
        return Err(Error::Shape {
            layer: "transpose",
            expected: "rank-3 tensor".into(),
            got: x.shape().to_vec(),
        });
    };
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for s in 0..n {
        for i in 0..a {
            for j in 0..b {
                out[s * a * b + j * a + i] = src[s * a * b + i * b + j];
            }
        }
    }
    Tensor::new(vec![n, b, a], out)
}

/// Mean over axis 1 of `(N, T, D)`, giving `(N, D)`.
pub fn mean_tokens(x: &Tensor) -> Result<Tensor> {
    let &[n, t, d] = x.shape() else {
        return Err(Error::Shape {
            layer: "mean_tokens",
            expected: "(N, T, D)".into(),
            got: x.shape().to_vec(),
        });
    };
    let mut out = vec![0.0; n * d];
    for s in 0..n {
        for tok in 0..t {
            for j in 0..d {
                out[s * d + j] += x.data()[(s * t + tok) * d + j];
            }
        }
    }
    let inv = 1.0 / t as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Tensor::new(vec![n, d], out)
}

/// Backward of [`mean_tokens`]: spreads `(N, D)` evenly over `T` tokens.
pub fn mean_tokens_backward(grad: &Tensor, tokens: usize) -> Result<Tensor> {
    let &[n, d] = grad.shape() else {
        return Err(Error::Shape {
            layer: "mean_tokens",
            expected: "(N, D)".into(),
            got: grad.shape().to_vec(),
        });
    };
    let inv = 1.0 / tokens as f64;
    let mut out = vec![0.0; n * tokens * d];
    for s in 0..n {
        for tok in 0..tokens {
            for j in 0..d {
                out[(s * tokens + tok) * d + j] = grad.data()[s * d + j] * inv;
            }
        }
    }
    Tensor::new(vec![n, tokens, d], out)
}

/// `(N, T, D) + (N, D)` broadcast over tokens.
pub fn add_per_token(tokens: &Tensor, v: &Tensor) -> Result<Tensor> {
    let &[n, t, d] = tokens.shape() else {
        return Err(Error::Shape {
            layer: "add_per_token",
            expected: "(N, T, D)".into(),
            got: tokens.shape().to_vec(),
        });
    };
    if v.shape() != [n, d] {
        return Err(Error::Shape {
            layer: "add_per_token",
            expected: format!("({n}, {d})"),
            got: v.shape().to_vec(),
        });
    }
    let mut out = tokens.clone();
    for s in 0..n {
        for tok in 0..t {
            for j in 0..d {
                out.data_mut()[(s * t + tok) * d + j] += v.data()[s * d + j];
            }
        }
    }
    Ok(out)
}

/// Gradient of [`add_per_token`] with respect to the broadcast operand.
pub fn sum_tokens(grad: &Tensor) -> Result<Tensor> {
    let t = grad.shape().get(1).copied().unwrap_or(1) as f64;
    let mut m = mean_tokens(grad)?;
    m.scale(t);
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_sim(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_sim(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_sim(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 0.0);
        assert!(cosine_sim(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn cosine_matches_normalize_then_dot() {
        let mut rng = SeededRng::new(5, 5);
        let a: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..64).map(|_| rng.normal()).collect();
        let na: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        let oracle: f64 = a.iter().zip(&b).map(|(x, y)| (x / na) * (y / nb)).sum();
        assert!((cosine_sim(&a, &b).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        assert_eq!(mm(&a, 2, 3, &b, 2), vec![0.5, 7.0, 2.0, 16.0]);
        let bt = [1.0, -1.0, 0.5, 0.0, 2.0, 1.0]; // b transposed, 2x3
        assert_eq!(mm_bt(&a, 2, 3, &bt, 2), mm(&a, 2, 3, &b, 2));
        let at = [1.0, 4.0, 2.0, 5.0, 3.0, 6.0]; // a transposed, 3x2
        assert_eq!(mm_at(&at, 3, 2, &b, 2), mm(&a, 2, 3, &b, 2));
    }

    #[test]
    fn transpose_roundtrip() {
        let x = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let t = transpose_last2(&x).unwrap();
        assert_eq!(t.shape(), &[2, 3, 2]);
        assert_eq!(transpose_last2(&t).unwrap(), x);
    }
}
