use crate::error::{Error, Result};
use crate::nn::{adam_step, LayerSpec, ParamSet, Sequential, Tensor};
use crate::rng::SeededRng;

use super::features::SubjectFeatureVector;

pub const FEATURES: usize = 4;
pub const HIDDEN: usize = 16;

/// Spread below which a feature is left unscaled.
const MIN_FEATURE_STD: f64 = 1e-12;

/// Two-layer perceptron on standardized subject features.
#[derive(Clone, Debug)]
pub struct MlpAttacker {
    params: ParamSet,
    net: Sequential,
    feature_mean: [f64; FEATURES],
    feature_scale: [f64; FEATURES],
}

fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn specs() -> Vec<LayerSpec> {
    vec![
        LayerSpec::Linear {
            in_features: FEATURES,
            out_features: HIDDEN,
        },
        LayerSpec::Relu,
        LayerSpec::Linear {
            in_features: HIDDEN,
            out_features: 1,
        },
    ]
}

impl MlpAttacker {
    /// Randomly initialised attacker with identity standardization.
    pub fn init(seed: u64) -> Self {
        let mut rng = SeededRng::derive(seed, &["mlp_attacker"]);
        let mut params = ParamSet::new();
        let net = Sequential::build(specs(), "mlp", &mut params, &mut rng).expect("fixed layer specs are valid");
        Self {
            params,
            net,
            feature_mean: [0.0; FEATURES],
            feature_scale: [1.0; FEATURES],
        }
    }

    /// Attacker with explicit weights `[w1 (16x4), b1 (16), w2 (1x16), b2 (1)]`.
    pub fn from_weights(
        weights: Vec<Tensor>,
        feature_mean: [f64; FEATURES],
        feature_scale: [f64; FEATURES],
    ) -> Result<Self> {
        let mut a = Self::init(0);
        a.params.load_values(weights)?;
        if feature_scale.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::InvalidArgument("feature scales must be > 0".into()));
        }
        a.feature_mean = feature_mean;
        a.feature_scale = feature_scale;
        Ok(a)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn feature_mean(&self) -> [f64; FEATURES] {
        self.feature_mean
    }

    pub fn feature_scale(&self) -> [f64; FEATURES] {
        self.feature_scale
    }

    pub fn standardize(&self, v: &SubjectFeatureVector) -> [f64; FEATURES] {
        let raw = v.to_array();
        std::array::from_fn(|i| (raw[i] - self.feature_mean[i]) / self.feature_scale[i])
    }

    fn logits(&self, rows: &[[f64; FEATURES]]) -> Result<Tensor> {
        let x = Tensor::new(vec![rows.len(), FEATURES], rows.concat())?;
        self.net.forward(&self.params, &x)
    }

    pub fn logit(&self, v: &SubjectFeatureVector) -> f64 {
        self.logits(&[self.standardize(v)]).expect("fixed shapes").data()[0]
    }

    /// Mean binary cross-entropy of sigmoid outputs on already standardized
    /// rows, with parameter gradients.
    pub fn bce(&self, rows: &[[f64; FEATURES]], labels: &[bool]) -> Result<(f64, Vec<Tensor>)> {
        if rows.len() != labels.len() || rows.is_empty() {
            return Err(Error::InvalidArgument("need one label per feature row".into()));
        }
        let x = Tensor::new(vec![rows.len(), FEATURES], rows.concat())?;
        let (z, tape) = self.net.forward_taped(&self.params, x)?;
        let n = rows.len() as f64;
        let mut loss = 0.0;
        let mut gz = Vec::with_capacity(rows.len());
        for (&zi, &yi) in z.data().iter().zip(labels) {
            let y = if yi { 1.0 } else { 0.0 };
            loss += zi.max(0.0) - zi * y + (-zi.abs()).exp().ln_1p();
            let p = if zi >= 0.0 { 1.0 / (1.0 + (-zi).exp()) } else { zi.exp() / (1.0 + zi.exp()) };
            gz.push((p - y) / n);
        }
        let mut grads = self.params.zero_grads();
        self.net
            .backward(&self.params, &tape, Tensor::new(vec![rows.len(), 1], gz)?, &mut grads)?;
        Ok((loss / n, grads))
    }
}

/// Membership probability in (0, 1).
pub fn mlp_score(attacker: &MlpAttacker, v: &SubjectFeatureVector) -> f64 {
    sigmoid(attacker.logit(v))
}

/// Full-batch Adam on BCE for exactly `steps` steps. Returns the attacker and
/// the loss before each step followed by the final loss.
pub fn train_mlp_attacker(
    features: &[SubjectFeatureVector],
    labels: &[bool],
    lr: f64,
    steps: usize,
    seed: u64,
) -> Result<(MlpAttacker, Vec<f64>)> {
    if features.len() != labels.len() {
        return Err(Error::InvalidArgument("need one label per feature vector".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::InsufficientSubjects(
            "attacker training data must contain members and non-members".into(),
        ));
    }
    let mut attacker = MlpAttacker::init(seed);
    let n = features.len() as f64;
    for i in 0..FEATURES {
        let col: Vec<f64> = features.iter().map(|f| f.to_array()[i]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let std = (col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        attacker.feature_mean[i] = mean;
        attacker.feature_scale[i] = if std > MIN_FEATURE_STD { std } else { 1.0 };
    }
    let rows: Vec<[f64; FEATURES]> = features.iter().map(|f| attacker.standardize(f)).collect();
    let mut trace = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (loss, grads) = attacker.bce(&rows, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numerical("attacker loss is not finite".into()));
        }
        trace.push(loss);
        adam_step(&mut attacker.params, &grads, lr)?;
    }
    trace.push(attacker.bce(&rows, labels)?.0);
    Ok((attacker, trace))
}
