//! Central finite-difference verification of analytic gradients.

use super::layers::{layer_backward, layer_forward, LayerSpec};
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::SeededRng;

pub const FD_STEP: f64 = 1e-5;

/// Magnitude below which gradient components are compared absolutely.
pub const FD_SCALE_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, FD_SCALE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(FD_SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares the analytic gradient returned by `loss_and_grad` against central
/// differences on `probe_count` randomly chosen coordinates (all of them when
/// `probe_count` covers every coordinate). Returns the largest relative error.
pub fn finite_diff_check<F>(
    mut loss_and_grad: F,
    params: &[Tensor],
    probe_count: usize,
    rng: &mut SeededRng,
) -> f64
where
    F: FnMut(&[Tensor]) -> (f64, Vec<Tensor>),
{
    let (_, analytic) = loss_and_grad(params);
    let coords: Vec<(usize, usize)> = params
        .iter()
        .enumerate()
        .flat_map(|(p, t)| (0..t.len()).map(move |i| (p, i)))
        .collect();
    let picks: Vec<usize> = if probe_count >= coords.len() {
        (0..coords.len()).collect()
    } else {
        rng.sample_without_replacement(coords.len(), probe_count)
    };

    let mut work = params.to_vec();
    let mut worst = 0.0f64;
    for idx in picks {
        let (p, i) = coords[idx];
        let orig = work[p].data()[i];
        work[p].data_mut()[i] = orig + FD_STEP;
        let (plus, _) = loss_and_grad(&work);
        work[p].data_mut()[i] = orig - FD_STEP;
        let (minus, _) = loss_and_grad(&work);
        work[p].data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic[p].data()[i], numeric));
    }
    worst
}

/// Finite-difference check of one layer's parameter and input gradients
/// under the loss `sum(w * layer(x))` with random `x` of `input_shape` and
/// random weights `w`. Returns the largest relative error.
pub fn layer_gradient_error(spec: &LayerSpec, input_shape: &[usize], rng: &mut SeededRng) -> Result<f64> {
    let x = Tensor::new(input_shape.to_vec(), (0..input_shape.iter().product()).map(|_| rng.normal()).collect())?;
    let mut params = spec.init_params(rng);
    // perturb biases and norm gains away from their 0/1 initialisation
    for p in &mut params {
        p.data_mut().iter_mut().for_each(|v| *v += 0.1 * rng.normal());
    }
    let out_shape = spec.output_shape(x.shape())?;
    let w = Tensor::new(out_shape.clone(), (0..out_shape.iter().product()).map(|_| rng.normal()).collect())?;
    let n_params = params.len();
    let mut all = params;
    all.push(x);
    let loss_and_grad = |values: &[Tensor]| -> (f64, Vec<Tensor>) {
        let (ps, x) = values.split_at(n_params);
        let y = layer_forward(spec, ps, &x[0]).expect("forward");
        let loss = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
        let (gx, mut grads) = layer_backward(spec, ps, &x[0], &w).expect("backward");
        grads.push(gx);
        (loss, grads)
    };
    Ok(finite_diff_check(loss_and_grad, &all, 200, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn regression_data() -> (Vec<f64>, Vec<f64>) {
        let mut rng = SeededRng::new(11, 0);
        let xs: Vec<f64> = (0..20).map(|_| rng.normal()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x - 0.5 + 0.1 * rng.normal()).collect();
        (xs, ys)
    }

    fn regression_loss(params: &[Tensor], xs: &[f64], ys: &[f64]) -> (f64, Vec<Tensor>) {
        let (w, b) = (params[0].data()[0], params[1].data()[0]);
        let n = xs.len() as f64;
        let mut loss = 0.0;
        let (mut gw, mut gb) = (0.0, 0.0);
        for (x, y) in xs.iter().zip(ys) {
            let r = w * x + b - y;
            loss += r * r / n;
            gw += 2.0 * r * x / n;
            gb += 2.0 * r / n;
        }
        (
            loss,
            vec![Tensor::from_vec(vec![gw]), Tensor::from_vec(vec![gb])],
        )
    }

    #[test]
    fn linear_regression_gradient_passes() {
        let (xs, ys) = regression_data();
        let params = vec![Tensor::from_vec(vec![0.3]), Tensor::from_vec(vec![-0.1])];
        let mut rng = SeededRng::new(1, 1);
        let err = finite_diff_check(|p| regression_loss(p, &xs, &ys), &params, 2, &mut rng);
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let params = vec![Tensor::from_vec(vec![1.0, 2.0, 3.0])];
        let mut rng = SeededRng::new(1, 1);
        let err = finite_diff_check(
            |p| (4.2, vec![p[0].zeros_like()]),
            &params,
            3,
            &mut rng,
        );
        assert_eq!(err, 0.0);
    }

    #[test]
    fn doubled_coordinate_is_detected() {
        let (xs, ys) = regression_data();
        let params = vec![Tensor::from_vec(vec![0.3]), Tensor::from_vec(vec![-0.1])];
        let mut rng = SeededRng::new(1, 1);
        let err = finite_diff_check(
            |p| {
                let (l, mut g) = regression_loss(p, &xs, &ys);
                g[0].data_mut()[0] *= 2.0;
                (l, g)
            },
            &params,
            2,
            &mut rng,
        );
        assert!(err > 0.4, "{err}");
    }
}
