//! Parameter storage, Adam and global-norm clipping.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Named parameters in declaration order with their Adam moments.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    step: u64,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a parameter and returns its slot.
    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        self.first_moment.push(value.zeros_like());
        self.second_moment.push(value.zeros_like());
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor] {
        &self.values
    }

    pub fn value(&self, slot: usize) -> &Tensor {
        &self.values[slot]
    }

    pub fn value_mut(&mut self, slot: usize) -> &mut Tensor {
        &mut self.values[slot]
    }

    pub fn total_elements(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    /// Zero gradients shaped like every parameter.
    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.values.iter().map(Tensor::zeros_like).collect()
    }

    /// Replaces parameter values, keeping names; shapes must match.
    pub fn load_values(&mut self, values: Vec<Tensor>) -> Result<()> {
        if values.len() != self.values.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                self.values.len(),
                values.len()
            )));
        }
        for ((name, p), v) in self.names.iter().zip(&self.values).zip(&values) {
            if p.shape() != v.shape() {
                return Err(Error::InvalidArgument(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    p.shape(),
                    v.shape()
                )));
            }
        }
        self.values = values;
        Ok(())
    }
}

pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt()
}

/// Rescales `grads` in place so their joint ℓ₂ norm is at most `threshold`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], threshold: f64) -> Result<f64> {
    if !(threshold > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "clip threshold must be > 0, got {threshold}"
        )));
    }
    let norm = global_norm(grads);
    if norm > threshold {
        let factor = threshold / norm;
        grads.iter_mut().for_each(|g| g.scale(factor));
    }
    Ok(norm)
}

/// One bias-corrected Adam update with β₁=0.9, β₂=0.999, ε=1e-8.
pub fn adam_step(params: &mut ParamSet, grads: &[Tensor], lr: f64) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step: {} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    for ((name, p), g) in params.names.iter().zip(&params.values).zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::InvalidArgument(format!(
                "adam_step: gradient for {name} has shape {:?}, expected {:?}",
                g.shape(),
                p.shape()
            )));
        }
    }
    params.step += 1;
    let t = params.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for (i, g) in grads.iter().enumerate() {
        let m = params.first_moment[i].data_mut();
        let v = params.second_moment[i].data_mut();
        let w = params.values[i].data_mut();
        for j in 0..g.len() {
            let gj = g.data()[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * gj;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            w[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
