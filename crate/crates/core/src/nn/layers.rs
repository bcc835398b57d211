//! Layer kinds with explicit forward and backward passes.
//!
//! Layers are pure functions of `(spec, params, input)`. Backward recomputes
//! whatever forward intermediates it needs from the saved input, so callers
//! only have to keep each layer's input around.
//!
//! Shape conventions (leading `N` is the batch):
//! - `conv1d`, `maxpool1d`, `avgpool1d`: `(N, C, L)`
//! - `linear`, `layernorm`: `(..., features)`
//! - `attention`: `(N, T, D)`
//! - `patch_embed`: `(N, 1, patches * patch_len) -> (N, patches, D)`

use serde::{Deserialize, Serialize};

use super::ops::{mm, mm_at, mm_bt};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::SeededRng;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv1d {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
    },
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    #[serde(rename = "maxpool1d")]
    MaxPool1d { kernel_size: usize, stride: usize },
    #[serde(rename = "avgpool1d")]
    AvgPool1d { kernel_size: usize, stride: usize },
    #[serde(rename = "layernorm")]
    LayerNorm { dim: usize },
    /// Single-head scaled dot-product self-attention with output projection.
    Attention { dim: usize },
    PatchEmbed {
        patch_len: usize,
        patches: usize,
        dim: usize,
    },
}

impl LayerSpec {
    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv1d { .. } => "conv1d",
            LayerSpec::Linear { .. } => "linear",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool1d { .. } => "maxpool1d",
            LayerSpec::AvgPool1d { .. } => "avgpool1d",
            LayerSpec::LayerNorm { .. } => "layernorm",
            LayerSpec::Attention { .. } => "attention",
            LayerSpec::PatchEmbed { .. } => "patch_embed",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |what: &str, v: usize| {
            if v == 0 {
                Err(Error::InvalidArgument(format!(
                    "{}: {what} must be >= 1",
                    self.name()
                )))
            } else {
                Ok(())
            }
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                positive("in_channels", in_channels)?;
                positive("out_channels", out_channels)?;
                positive("kernel_size", kernel_size)?;
                positive("stride", stride)
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                positive("in_features", in_features)?;
                positive("out_features", out_features)
            }
            LayerSpec::Relu => Ok(()),
            LayerSpec::MaxPool1d {
                kernel_size,
                stride,
            }
            | LayerSpec::AvgPool1d {
                kernel_size,
                stride,
            } => {
                positive("kernel_size", kernel_size)?;
                positive("stride", stride)
            }
            LayerSpec::LayerNorm { dim } | LayerSpec::Attention { dim } => positive("dim", dim),
            LayerSpec::PatchEmbed {
                patch_len,
                patches,
                dim,
            } => {
                positive("patch_len", patch_len)?;
                positive("patches", patches)?;
                positive("dim", dim)
            }
        }
    }

    /// Parameter names and shapes in declaration order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => vec![
                ("weight", vec![out_channels, in_channels, kernel_size]),
                ("bias", vec![out_channels]),
            ],
            LayerSpec::Linear {
                in_features,
                out_features,
            } => vec![
                ("weight", vec![out_features, in_features]),
                ("bias", vec![out_features]),
            ],
            LayerSpec::Relu | LayerSpec::MaxPool1d { .. } | LayerSpec::AvgPool1d { .. } => vec![],
            LayerSpec::LayerNorm { dim } => vec![("gamma", vec![dim]), ("beta", vec![dim])],
            LayerSpec::Attention { dim } => vec![
                ("wq", vec![dim, dim]),
                ("bq", vec![dim]),
                ("wk", vec![dim, dim]),
                ("bk", vec![dim]),
                ("wv", vec![dim, dim]),
                ("bv", vec![dim]),
                ("wo", vec![dim, dim]),
                ("bo", vec![dim]),
            ],
            LayerSpec::PatchEmbed {
                patch_len,
                patches,
                dim,
            } => vec![
                ("weight", vec![dim, patch_len]),
                ("bias", vec![dim]),
                ("pos", vec![patches, dim]),
            ],
        }
    }

    fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size,
            LayerSpec::Linear { in_features, .. } => in_features,
            LayerSpec::Attention { dim } => dim,
            LayerSpec::PatchEmbed { patch_len, .. } => patch_len,
            _ => 1,
        }
    }

    /// Fresh parameters: weights and biases uniform in `±1/sqrt(fan_in)`,
    /// layer-norm gain 1 and shift 0.
    pub fn init_params(&self, rng: &mut SeededRng) -> Vec<Tensor> {
        let bound = 1.0 / (self.fan_in() as f64).sqrt();
        self.param_shapes()
            .into_iter()
            .map(|(name, shape)| match (self, name) {
                (LayerSpec::LayerNorm { .. }, "gamma") => Tensor::filled(&shape, 1.0),
                (LayerSpec::LayerNorm { .. }, "beta") => Tensor::zeros(&shape),
                (LayerSpec::PatchEmbed { dim, .. }, "pos") => {
                    let pos_bound = 1.0 / (*dim as f64).sqrt();
                    uniform_tensor(&shape, pos_bound, rng)
                }
                _ => uniform_tensor(&shape, bound, rng),
            })
            .collect()
    }

    /// Output shape for a given input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |expected: String| Error::Shape {
            layer: self.name(),
            expected,
            got: input.to_vec(),
        };
        match *self {
            LayerSpec::Conv1d {
                in_channels,
                out_channels,
                kernel_size,
                stride,
            } => {
                if input.len() != 3 || input[1] != in_channels || input[2] < kernel_size {
                    return Err(mismatch(format!(
                        "(N, {in_channels}, L >= {kernel_size})"
                    )));
                }
                Ok(vec![
                    input[0],
                    out_channels,
                    pooled_len(input[2], kernel_size, stride),
                ])
            }
            LayerSpec::Linear {
                in_features,
                out_features,
            } => {
                if input.is_empty() || input[input.len() - 1] != in_features {
                    return Err(mismatch(format!("(..., {in_features})")));
                }
                let mut out = input.to_vec();
                *out.last_mut().unwrap() = out_features;
                Ok(out)
            }
            LayerSpec::Relu => Ok(input.to_vec()),
            LayerSpec::MaxPool1d {
                kernel_size,
                stride,
            }
            | LayerSpec::AvgPool1d {
                kernel_size,
                stride,
            } => {
                if input.len() != 3 || input[2] < kernel_size {
                    return Err(mismatch(format!("(N, C, L >= {kernel_size})")));
                }
                Ok(vec![
                    input[0],
                    input[1],
                    pooled_len(input[2], kernel_size, stride),
                ])
            }
            LayerSpec::LayerNorm { dim } => {
                if input.is_empty() || input[input.len() - 1] != dim {
                    return Err(mismatch(format!("(..., {dim})")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Attention { dim } => {
                if input.len() != 3 || input[2] != dim || input[1] == 0 {
                    return Err(mismatch(format!("(N, T >= 1, {dim})")));
                }
                Ok(input.to_vec())
            }
            LayerSpec::PatchEmbed {
                patch_len,
                patches,
                dim,
            } => {
                if input.len() != 3 || input[1] != 1 || input[2] != patch_len * patches {
                    return Err(mismatch(format!("(N, 1, {})", patch_len * patches)));
                }
                Ok(vec![input[0], patches, dim])
            }
        }
    }
}

/// `floor((len - kernel) / stride) + 1`, the sliding-window output length.
pub fn pooled_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

fn uniform_tensor(shape: &[usize], bound: f64, rng: &mut SeededRng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.uniform_range(-bound, bound);
    }
    t
}

fn check_params(spec: &LayerSpec, params: &[Tensor]) -> Result<()> {
    let shapes = spec.param_shapes();
    if shapes.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "{}: expected {} parameter tensors, got {}",
            spec.name(),
            shapes.len(),
            params.len()
        )));
    }
    for ((name, shape), p) in shapes.iter().zip(params) {
        if p.shape() != shape.as_slice() {
            return Err(Error::Shape {
                layer: spec.name(),
                expected: format!("{name} of shape {shape:?}"),
                got: p.shape().to_vec(),
            });
        }
    }
    Ok(())
}

pub fn layer_forward(spec: &LayerSpec, params: &[Tensor], input: &Tensor) -> Result<Tensor> {
    spec.validate()?;
    check_params(spec, params)?;
    let out_shape = spec.output_shape(input.shape())?;
    let mut out = Tensor::zeros(&out_shape);
    let x = input.data();
    let y = out.data_mut();
    match *spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
        } => {
            let (n, len) = (input.shape()[0], input.shape()[2]);
            let lout = out_shape[2];
            let w = params[0].data();
            let b = params[1].data();
            let taps = in_channels * kernel_size;
            for s in 0..n {
                let xs = &x[s * in_channels * len..(s + 1) * in_channels * len];
                let col = im2col(xs, in_channels, len, kernel_size, stride, lout);
                let ys = mm(w, out_channels, taps, &col, lout);
                let dst = &mut y[s * out_channels * lout..(s + 1) * out_channels * lout];
                for (o, (row, src)) in dst.chunks_mut(lout).zip(ys.chunks(lout)).enumerate() {
                    for (d, v) in row.iter_mut().zip(src) {
                        *d = v + b[o];
                    }
                }
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let rows = input.len() / in_features;
            let prod = mm_bt(x, rows, in_features, params[0].data(), out_features);
            let b = params[1].data();
            for r in 0..rows {
                for o in 0..out_features {
                    y[r * out_features + o] = prod[r * out_features + o] + b[o];
                }
            }
        }
        LayerSpec::Relu => {
            for (o, &v) in y.iter_mut().zip(x) {
                *o = if v > 0.0 { v } else { 0.0 };
            }
        }
        LayerSpec::MaxPool1d {
            kernel_size,
            stride,
        } => {
            let len = input.shape()[2];
            let lout = out_shape[2];
            for (row_idx, row) in y.chunks_mut(lout).enumerate() {
                let xrow = &x[row_idx * len..(row_idx + 1) * len];
                for (t, o) in row.iter_mut().enumerate() {
                    let win = &xrow[t * stride..t * stride + kernel_size];
                    *o = win.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                }
            }
        }
        LayerSpec::AvgPool1d {
            kernel_size,
            stride,
        } => {
            let len = input.shape()[2];
            let lout = out_shape[2];
            let inv = 1.0 / kernel_size as f64;
            for (row_idx, row) in y.chunks_mut(lout).enumerate() {
                let xrow = &x[row_idx * len..(row_idx + 1) * len];
                for (t, o) in row.iter_mut().enumerate() {
                    *o = xrow[t * stride..t * stride + kernel_size].iter().sum::<f64>() * inv;
                }
            }
        }
        LayerSpec::LayerNorm { dim } => {
            let gamma = params[0].data();
            let beta = params[1].data();
            for (xr, yr) in x.chunks(dim).zip(y.chunks_mut(dim)) {
                let (mean, inv_std) = row_moments(xr);
                for j in 0..dim {
                    yr[j] = gamma[j] * (xr[j] - mean) * inv_std + beta[j];
                }
            }
        }
        LayerSpec::Attention { dim } => {
            let (n, t) = (input.shape()[0], input.shape()[1]);
            for s in 0..n {
                let xs = &x[s * t * dim..(s + 1) * t * dim];
                let fwd = attention_forward(xs, t, dim, params);
                y[s * t * dim..(s + 1) * t * dim].copy_from_slice(&fwd.out);
            }
        }
        LayerSpec::PatchEmbed {
            patch_len,
            patches,
            dim,
        } => {
            let n = input.shape()[0];
            let w = params[0].data();
            let b = params[1].data();
            let pos = params[2].data();
            for s in 0..n {
                let xs = &x[s * patches * patch_len..(s + 1) * patches * patch_len];
                let prod = mm_bt(xs, patches, patch_len, w, dim);
                let ys = &mut y[s * patches * dim..(s + 1) * patches * dim];
                for p in 0..patches {
                    for d in 0..dim {
                        ys[p * dim + d] = prod[p * dim + d] + b[d] + pos[p * dim + d];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of a scalar loss with respect to the layer input and parameters,
/// given the gradient with respect to the layer output.
pub fn layer_backward(
    spec: &LayerSpec,
    params: &[Tensor],
    input: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Vec<Tensor>)> {
    spec.validate()?;
    check_params(spec, params)?;
    let out_shape = spec.output_shape(input.shape())?;
    if grad_out.shape() != out_shape.as_slice() {
        return Err(Error::Shape {
            layer: spec.name(),
            expected: format!("grad_out of shape {out_shape:?}"),
            got: grad_out.shape().to_vec(),
        });
    }
    let mut grad_in = input.zeros_like();
    let mut grad_params: Vec<Tensor> = params.iter().map(Tensor::zeros_like).collect();
    let x = input.data();
    let gy = grad_out.data();
    match *spec {
        LayerSpec::Conv1d {
            in_channels,
            out_channels,
            kernel_size,
            stride,
        } => {
            let (n, len) = (input.shape()[0], input.shape()[2]);
            let lout = out_shape[2];
            let w = params[0].data();
            let (gw_slot, gb_slot) = grad_params.split_at_mut(1);
            let gw = gw_slot[0].data_mut();
            let gb = gb_slot[0].data_mut();
            let gx = grad_in.data_mut();
            let taps = in_channels * kernel_size;
            for s in 0..n {
                let xs = &x[s * in_channels * len..(s + 1) * in_channels * len];
                let gys = &gy[s * out_channels * lout..(s + 1) * out_channels * lout];
                for (o, grow) in gys.chunks(lout).enumerate() {
                    gb[o] += grow.iter().sum::<f64>();
                }
                let col = im2col(xs, in_channels, len, kernel_size, stride, lout);
                add_into(gw, &mm_bt(gys, out_channels, lout, &col, taps));
                let gcol = mm_at(w, out_channels, taps, gys, lout);
                let gxs = &mut gx[s * in_channels * len..(s + 1) * in_channels * len];
                for (tap, grow) in gcol.chunks(lout).enumerate() {
                    let (c, k) = (tap / kernel_size, tap % kernel_size);
                    let gxrow = &mut gxs[c * len..(c + 1) * len];
                    for (t, &g) in grow.iter().enumerate() {
                        gxrow[t * stride + k] += g;
                    }
                }
            }
        }
        LayerSpec::Linear {
            in_features,
            out_features,
        } => {
            let rows = input.len() / in_features;
            let w = params[0].data();
            let gx = mm(gy, rows, out_features, w, in_features);
            grad_in.data_mut().copy_from_slice(&gx);
            let gw = mm_at(gy, rows, out_features, x, in_features);
            grad_params[0].data_mut().copy_from_slice(&gw);
            let gb = grad_params[1].data_mut();
            for r in 0..rows {
                for o in 0..out_features {
                    gb[o] += gy[r * out_features + o];
                }
            }
        }
        LayerSpec::Relu => {
            for ((g, &v), &d) in grad_in.data_mut().iter_mut().zip(x).zip(gy) {
                *g = if v > 0.0 { d } else { 0.0 };
            }
        }
        LayerSpec::MaxPool1d {
            kernel_size,
            stride,
        } => {
            let len = input.shape()[2];
            let lout = out_shape[2];
            let gx = grad_in.data_mut();
            for (row_idx, grow) in gy.chunks(lout).enumerate() {
                let xrow = &x[row_idx * len..(row_idx + 1) * len];
                let gxrow = &mut gx[row_idx * len..(row_idx + 1) * len];
                for (t, &g) in grow.iter().enumerate() {
                    let start = t * stride;
                    let mut best = start;
                    for i in start + 1..start + kernel_size {
                        if xrow[i] > xrow[best] {
                            best = i;
                        }
                    }
                    gxrow[best] += g;
                }
            }
        }
        LayerSpec::AvgPool1d {
            kernel_size,
            stride,
        } => {
            let len = input.shape()[2];
            let lout = out_shape[2];
            let inv = 1.0 / kernel_size as f64;
            let gx = grad_in.data_mut();
            for (row_idx, grow) in gy.chunks(lout).enumerate() {
                let gxrow = &mut gx[row_idx * len..(row_idx + 1) * len];
                for (t, &g) in grow.iter().enumerate() {
                    for v in &mut gxrow[t * stride..t * stride + kernel_size] {
                        *v += g * inv;
                    }
                }
            }
        }
        LayerSpec::LayerNorm { dim } => {
            let gamma = params[0].data();
            let (gg_slot, gb_slot) = grad_params.split_at_mut(1);
            let ggamma = gg_slot[0].data_mut();
            let gbeta = gb_slot[0].data_mut();
            let inv_dim = 1.0 / dim as f64;
            for ((xr, gr), gxr) in x
                .chunks(dim)
                .zip(gy.chunks(dim))
                .zip(grad_in.data_mut().chunks_mut(dim))
            {
                let (mean, inv_std) = row_moments(xr);
                let mut mean_dxhat = 0.0;
                let mut mean_dxhat_xhat = 0.0;
                for j in 0..dim {
                    let xhat = (xr[j] - mean) * inv_std;
                    ggamma[j] += gr[j] * xhat;
                    gbeta[j] += gr[j];
                    let dxhat = gr[j] * gamma[j];
                    mean_dxhat += dxhat;
                    mean_dxhat_xhat += dxhat * xhat;
                }
                mean_dxhat *= inv_dim;
                mean_dxhat_xhat *= inv_dim;
                for j in 0..dim {
                    let xhat = (xr[j] - mean) * inv_std;
                    let dxhat = gr[j] * gamma[j];
                    gxr[j] = inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
                }
            }
        }
        LayerSpec::Attention { dim } => {
            let (n, t) = (input.shape()[0], input.shape()[1]);
            for s in 0..n {
                let xs = &x[s * t * dim..(s + 1) * t * dim];
                let gys = &gy[s * t * dim..(s + 1) * t * dim];
                let gxs = attention_backward(xs, gys, t, dim, params, &mut grad_params);
                grad_in.data_mut()[s * t * dim..(s + 1) * t * dim].copy_from_slice(&gxs);
            }
        }
        LayerSpec::PatchEmbed {
            patch_len,
            patches,
            dim,
        } => {
            let n = input.shape()[0];
            let w = params[0].data();
            for s in 0..n {
                let xs = &x[s * patches * patch_len..(s + 1) * patches * patch_len];
                let gys = &gy[s * patches * dim..(s + 1) * patches * dim];
                let gx = mm(gys, patches, dim, w, patch_len);
                grad_in.data_mut()[s * patches * patch_len..(s + 1) * patches * patch_len]
                    .copy_from_slice(&gx);
                let gw = mm_at(gys, patches, dim, xs, patch_len);
                add_into(grad_params[0].data_mut(), &gw);
                let gb = grad_params[1].data_mut();
                for p in 0..patches {
                    for d in 0..dim {
                        gb[d] += gys[p * dim + d];
                    }
                }
                add_into(grad_params[2].data_mut(), gys);
            }
        }
    }
    Ok((grad_in, grad_params))
}

#[inline]
/// Unfolds `(C, L)` into a `(C * k, lout)` matrix of strided taps.
fn im2col(x: &[f64], channels: usize, len: usize, kernel: usize, stride: usize, lout: usize) -> Vec<f64> {
    let mut col = vec![0.0; channels * kernel * lout];
    for c in 0..channels {
        let xrow = &x[c * len..(c + 1) * len];
        for k in 0..kernel {
            let dst = &mut col[(c * kernel + k) * lout..(c * kernel + k + 1) * lout];
            for (t, d) in dst.iter_mut().enumerate() {
                *d = xrow[t * stride + k];
            }
        }
    }
    col
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

struct AttentionForward {
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<f64>,
    ctx: Vec<f64>,
    out: Vec<f64>,
}

fn project(x: &[f64], rows: usize, dim: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let mut y = mm_bt(x, rows, dim, w.data(), dim);
    for r in 0..rows {
        for (v, bias) in y[r * dim..(r + 1) * dim].iter_mut().zip(b.data()) {
            *v += bias;
        }
    }
    y
}

fn attention_forward(x: &[f64], t: usize, dim: usize, params: &[Tensor]) -> AttentionForward {
    let q = project(x, t, dim, &params[0], &params[1]);
    let k = project(x, t, dim, &params[2], &params[3]);
    let v = project(x, t, dim, &params[4], &params[5]);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut probs = mm_bt(&q, t, dim, &k, t);
    for row in probs.chunks_mut(t) {
        let max = row.iter().map(|s| s * scale).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for s in row.iter_mut() {
            *s = (*s * scale - max).exp();
            total += *s;
        }
        for s in row.iter_mut() {
            *s /= total;
        }
    }
    let ctx = mm(&probs, t, t, &v, dim);
    let out = project(&ctx, t, dim, &params[6], &params[7]);
    AttentionForward {
        q,
        k,
        v,
        probs,
        ctx,
        out,
    }
}

fn attention_backward(
    x: &[f64],
    gy: &[f64],
    t: usize,
    dim: usize,
    params: &[Tensor],
    grads: &mut [Tensor],
) -> Vec<f64> {
    let fwd = attention_forward(x, t, dim, params);
    let scale = 1.0 / (dim as f64).sqrt();

    // output projection
    add_into(grads[6].data_mut(), &mm_at(gy, t, dim, &fwd.ctx, dim));
    add_bias_grad(grads[7].data_mut(), gy, dim);
    let g_ctx = mm(gy, t, dim, params[6].data(), dim);

    // ctx = probs · v
    let g_probs = mm_bt(&g_ctx, t, dim, &fwd.v, t);
    let g_v = mm_at(&fwd.probs, t, t, &g_ctx, dim);

    // softmax rows, then the 1/sqrt(d) scaling
    let mut g_scores = vec![0.0; t * t];
    for r in 0..t {
        let p = &fwd.probs[r * t..(r + 1) * t];
        let gp = &g_probs[r * t..(r + 1) * t];
        let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
        for c in 0..t {
            g_scores[r * t + c] = p[c] * (gp[c] - dot) * scale;
        }
    }
    let g_q = mm(&g_scores, t, t, &fwd.k, dim);
    let g_k = mm_at(&g_scores, t, t, &fwd.q, dim);

    let mut g_x = vec![0.0; t * dim];
    for (slot, g) in [(0usize, &g_q), (2, &g_k), (4, &g_v)] {
        add_into(grads[slot].data_mut(), &mm_at(g, t, dim, x, dim));
        add_bias_grad(grads[slot + 1].data_mut(), g, dim);
        add_into(&mut g_x, &mm(g, t, dim, params[slot].data(), dim));
    }
    g_x
}

fn add_bias_grad(gb: &mut [f64], g: &[f64], dim: usize) {
    for row in g.chunks(dim) {
        add_into(gb, row);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(in_c: usize, out_c: usize, k: usize, s: usize) -> LayerSpec {
        LayerSpec::Conv1d {
            in_channels: in_c,
            out_channels: out_c,
            kernel_size: k,
            stride: s,
        }
    }

    #[test]
    fn conv_output_length_follows_stride_rule() {
        let spec = conv(1, 4, 7, 2);
        assert_eq!(spec.output_shape(&[1, 1, 2000]).unwrap(), vec![1, 4, 997]);
    }

    #[test]
    fn relu_forward_and_backward() {
        let x = Tensor::from_vec(vec![-1.0, 0.0, 2.0]);
        let y = layer_forward(&LayerSpec::Relu, &[], &x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);

        let x = Tensor::from_vec(vec![-1.0, 2.0]);
        let g = Tensor::from_vec(vec![1.0, 1.0]);
        let (gx, gp) = layer_backward(&LayerSpec::Relu, &[], &x, &g).unwrap();
        assert_eq!(gx.data(), &[0.0, 1.0]);
        assert!(gp.is_empty());
    }

    #[test]
    fn identity_conv_copies_input() {
        let spec = conv(1, 1, 1, 1);
        let params = vec![
            Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap(),
            Tensor::zeros(&[1]),
        ];
        let x = Tensor::new(vec![1, 1, 5], vec![0.3, -1.0, 2.5, 0.0, 7.0]).unwrap();
        let y = layer_forward(&spec, &params, &x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn shape_error_names_layer() {
        let spec = conv(3, 2, 3, 1);
        let mut rng = SeededRng::new(0, 0);
        let params = spec.init_params(&mut rng);
        let err = layer_forward(&spec, &params, &Tensor::zeros(&[1, 2, 10])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("conv1d") && msg.contains("(N, 3"), "{msg}");
    }

    #[test]
    fn backward_rejects_wrong_grad_shape() {
        let spec = LayerSpec::Linear {
            in_features: 3,
            out_features: 2,
        };
        let mut rng = SeededRng::new(0, 0);
        let params = spec.init_params(&mut rng);
        let x = Tensor::zeros(&[4, 3]);
        assert!(layer_backward(&spec, &params, &x, &Tensor::zeros(&[4, 3])).is_err());
    }

    #[test]
    fn maxpool_and_avgpool_values() {
        let x = Tensor::new(vec![1, 1, 6], vec![1.0, 5.0, 2.0, 2.0, 9.0, 0.0]).unwrap();
        let max = LayerSpec::MaxPool1d {
            kernel_size: 2,
            stride: 2,
        };
        let avg = LayerSpec::AvgPool1d {
            kernel_size: 3,
            stride: 3,
        };
        assert_eq!(layer_forward(&max, &[], &x).unwrap().data(), &[5.0, 2.0, 9.0]);
        assert_eq!(
            layer_forward(&avg, &[], &x).unwrap().data(),
            &[8.0 / 3.0, 11.0 / 3.0]
        );
    }

    #[test]
    fn layernorm_output_is_standardized() {
        let spec = LayerSpec::LayerNorm { dim: 4 };
        let params = spec.init_params(&mut SeededRng::new(0, 0));
        let x = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = layer_forward(&spec, &params, &x).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
    }

    #[test]
    fn attention_rows_mix_values() {
        let spec = LayerSpec::Attention { dim: 4 };
        let params = spec.init_params(&mut SeededRng::new(3, 0));
        let mut rng = SeededRng::new(4, 0);
        let x = Tensor::new(vec![2, 3, 4], (0..24).map(|_| rng.normal()).collect()).unwrap();
        let y = layer_forward(&spec, &params, &x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 4]);
        assert!(y.is_finite());
        // samples are independent
        let first = Tensor::new(vec![1, 3, 4], x.data()[..12].to_vec()).unwrap();
        let y1 = layer_forward(&spec, &params, &first).unwrap();
        assert_eq!(&y.data()[..12], y1.data());
    }

    /// One representative of every layer kind with its input shape.
    fn every_kind() -> Vec<(LayerSpec, Vec<usize>)> {
        vec![
            (conv(2, 3, 3, 2), vec![2, 2, 11]),
            (LayerSpec::Linear { in_features: 4, out_features: 3 }, vec![2, 5, 4]),
            (LayerSpec::Relu, vec![2, 3, 5]),
            (LayerSpec::MaxPool1d { kernel_size: 3, stride: 2 }, vec![2, 2, 9]),
            (LayerSpec::AvgPool1d { kernel_size: 3, stride: 2 }, vec![2, 2, 9]),
            (LayerSpec::LayerNorm { dim: 5 }, vec![2, 3, 5]),
            (LayerSpec::Attention { dim: 4 }, vec![2, 3, 4]),
            (LayerSpec::PatchEmbed { patch_len: 4, patches: 3, dim: 5 }, vec![2, 1, 12]),
        ]
    }

    #[test]
    fn every_layer_kind_matches_finite_differences() {
        for seed in 0..3 {
            for (spec, shape) in every_kind() {
                let err = crate::nn::layer_gradient_error(&spec, &shape, &mut SeededRng::new(seed, 0)).unwrap();
                assert!(err < 1e-4, "{} seed {seed}: {err}", spec.name());
            }
        }
    }
}
