//! Layer stacks bound to parameter slots, with a recorded tape for backward.

use std::ops::Range;

use super::layers::{layer_backward, layer_forward, LayerSpec};
use super::optim::ParamSet;
use super::tensor::Tensor;
use crate::error::Result;
use crate::rng::SeededRng;

/// A layer whose parameters live at `slots` inside a [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub slots: Range<usize>,
}

impl Layer {
    /// Validates `spec`, initialises its parameters into `params` under
    /// `prefix` and returns the bound layer.
    pub fn build(
        spec: LayerSpec,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        spec.validate()?;
        let start = params.len();
        for ((name, _), value) in spec.param_shapes().into_iter().zip(spec.init_params(rng)) {
            params.push(format!("{prefix}.{name}"), value);
        }
        Ok(Self {
            spec,
            slots: start..params.len(),
        })
    }

    pub fn forward(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        layer_forward(&self.spec, &params.values()[self.slots.clone()], input)
    }

    /// Backward pass; parameter gradients are added into `grads`.
    pub fn backward(
        &self,
        params: &ParamSet,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let (gx, gp) = layer_backward(
            &self.spec,
            &params.values()[self.slots.clone()],
            input,
            grad_out,
        )?;
        for (slot, g) in self.slots.clone().zip(gp) {
            grads[slot].add_assign(&g)?;
        }
        Ok(gx)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

/// Inputs seen by each layer of a [`Sequential`] during forward.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    inputs: Vec<Tensor>,
}

impl Sequential {
    pub fn build(
        specs: Vec<LayerSpec>,
        prefix: &str,
        params: &mut ParamSet,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let layers = specs
            .into_iter()
            .enumerate()
            .map(|(i, spec)| Layer::build(spec, &format!("{prefix}.{i}"), params, rng))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        self.layers
            .iter()
            .try_fold(input.to_vec(), |shape, l| l.spec.output_shape(&shape))
    }

    pub fn forward(&self, params: &ParamSet, input: &Tensor) -> Result<Tensor> {
        self.layers
            .iter()
            .try_fold(input.clone(), |x, l| l.forward(params, &x))
    }

    pub fn forward_taped(&self, params: &ParamSet, input: Tensor) -> Result<(Tensor, Tape)> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input;
        for l in &self.layers {
            let y = l.forward(params, &x)?;
            tape.inputs.push(x);
            x = y;
        }
        Ok((x, tape))
    }

    pub fn backward(
        &self,
        params: &ParamSet,
        tape: &Tape,
        grad_out: Tensor,
        grads: &mut [Tensor],
    ) -> Result<Tensor> {
        let mut g = grad_out;
        for (l, x) in self.layers.iter().zip(&tape.inputs).rev() {
            g = l.backward(params, x, &g, grads)?;
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::finite_diff_check;

    #[test]
    fn stack_gradient_matches_finite_differences() {
        let mut rng = SeededRng::new(2, 0);
        let mut params = ParamSet::new();
        let net = Sequential::build(
            vec![
                LayerSpec::Conv1d {
                    in_channels: 2,
                    out_channels: 3,
                    kernel_size: 3,
                    stride: 2,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool1d {
                    kernel_size: 2,
                    stride: 1,
                },
            ],
            "net",
            &mut params,
            &mut rng,
        )
        .unwrap();
        let x = Tensor::new(vec![2, 2, 11], (0..44).map(|_| rng.normal()).collect()).unwrap();
        let out_shape = net.output_shape(x.shape()).unwrap();
        let weights: Vec<f64> = (0..out_shape.iter().product::<usize>())
            .map(|_| rng.normal())
            .collect();

        let base = params.clone();
        let check = finite_diff_check(
            |values| {
                let mut ps = base.clone();
                ps.load_values(values.to_vec()).unwrap();
                let (y, tape) = net.forward_taped(&ps, x.clone()).unwrap();
                let loss: f64 = y.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
                let mut grads = ps.zero_grads();
                let gy = Tensor::new(out_shape.clone(), weights.clone()).unwrap();
                net.backward(&ps, &tape, gy, &mut grads).unwrap();
                (loss, grads)
            },
            base.values(),
            usize::MAX,
            &mut rng,
        );
        assert!(check < 1e-4, "{check}");
    }
}
