use serde::{Deserialize, Serialize};

use super::gradcheck::Differentiable;
use super::optim::{lbfgs, proximal_gradient};
use super::{log_sum_exp, softmax_in_place, ModelError, Penalty, ProbabilisticClassifier, Samples, TrainConfig};
use crate::features::FeatureVector;

const LBFGS_MEMORY: usize = 10;

/// Multinomial logistic regression.
///
/// Minimizes `(1/N) Σ w_{y_i} · CE_i + R(W) / (C·N)` where `R` is `½‖W‖²`
/// (l2) or `‖W‖₁` (l1). Biases are not penalized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    n_classes: usize,
    n_features: usize,
    /// Row-major `n_classes × n_features`.
    weights: Vec<f64>,
    bias: Vec<f64>,
    penalty: Penalty,
    c: f64,
    class_weights: Vec<f64>,
}

impl LinearModel {
    /// All-zero parameters: predicts the uniform distribution.
    pub fn zeros(n_features: usize, n_classes: usize, penalty: Penalty, c: f64) -> Self {
        LinearModel {
            n_classes,
            n_features,
            weights: vec![0.0; n_classes * n_features],
            bias: vec![0.0; n_classes],
            penalty,
            c,
            class_weights: vec![1.0; n_classes],
        }
    }

    pub fn from_parameters(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self, ModelError> {
        let k = bias.len();
        let d = weights.first().map_or(0, Vec::len);
        if weights.len() != k || weights.iter().any(|r| r.len() != d) {
            return Err(ModelError::InvalidConfig("weights must be K rows of equal length".into()));
        }
        let mut m = LinearModel::zeros(d, k, Penalty::L2, 1.0);
        m.weights = weights.into_iter().flatten().collect();
        m.bias = bias;
        Ok(m)
    }

    pub fn weight(&self, class: usize, feature: usize) -> f64 {
        self.weights[class * self.n_features + feature]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn class_weights(&self) -> &[f64] {
        &self.class_weights
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }

    pub fn permute_inputs(&self, source: &[usize]) -> LinearModel {
        let mut out = self.clone();
        for k in 0..self.n_classes {
            for (i, &s) in source.iter().enumerate() {
                out.weights[k * self.n_features + i] = self.weights[k * self.n_features + s];
            }
        }
        out
    }

    fn flat_params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    fn set_flat_params(&mut self, p: &[f64]) {
        let kd = self.weights.len();
        self.weights.copy_from_slice(&p[..kd]);
        self.bias.copy_from_slice(&p[kd..]);
    }
}

/// Weighted mean cross-entropy over `samples` (plus `½ l2 ‖W‖²`) and its
/// gradient with respect to `[W, b]`.
fn cross_entropy(
    params: &[f64],
    grad: &mut [f64],
    samples: &Samples<'_>,
    class_weights: &[f64],
    n_features: usize,
    l2: f64,
) -> f64 {
    let k = samples.n_classes;
    let kd = k * n_features;
    let (w, b) = params.split_at(kd);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let n = samples.len() as f64;
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for (x, &y) in samples.features.iter().zip(samples.labels) {
        for c in 0..k {
            let row = &w[c * n_features..(c + 1) * n_features];
            z[c] = b[c] + x.entries().iter().map(|&(j, v)| v * row[j]).sum::<f64>();
        }
        let cw = class_weights[y];
        loss += cw * (log_sum_exp(&z) - z[y]);
        softmax_in_place(&mut z);
        z[y] -= 1.0;
        for c in 0..k {
            let delta = cw * z[c] / n;
            if delta == 0.0 {
                continue;
            }
            let grow = &mut grad[c * n_features..(c + 1) * n_features];
            for &(j, v) in x.entries() {
                grow[j] += delta * v;
            }
            grad[kd + c] += delta;
        }
    }
    loss /= n;
    if l2 > 0.0 {
        let mut sq = 0.0;
        for (g, wv) in grad[..kd].iter_mut().zip(w) {
            *g += l2 * wv;
            sq += wv * wv;
        }
        loss += 0.5 * l2 * sq;
    }
    loss
}

/// Trains a logistic regression model by deterministic full-batch
/// optimization: L-BFGS for l2, proximal gradient (soft-thresholding) for l1.
pub fn train_logistic(
    samples: Samples<'_>,
    config: &TrainConfig,
    penalty: Penalty,
    c: f64,
) -> Result<LinearModel, ModelError> {
    train_logistic_with_trace(samples, config, penalty, c).map(|(m, _)| m)
}

/// As [`train_logistic`], also returning the objective after each accepted iterate.
pub fn train_logistic_with_trace(
    samples: Samples<'_>,
    config: &TrainConfig,
    penalty: Penalty,
    c: f64,
) -> Result<(LinearModel, Vec<f64>), ModelError> {
    config.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(ModelError::InvalidConfig(format!("C must be positive and finite, got {c}")));
    }
    samples.validate(true)?;
    let class_weights = config.class_weight.resolve(&samples)?;
    let d = samples.dimension();
    let k = samples.n_classes;
    let mut model = LinearModel::zeros(d, k, penalty, c);
    model.class_weights = class_weights.clone();
    let n = samples.len() as f64;
    let lambda = 1.0 / (c * n);
    let mut params = model.flat_params();
    let kd = k * d;
    let trace = match penalty {
        Penalty::L2 => lbfgs(
            &mut params,
            |p, g| cross_entropy(p, g, &samples, &class_weights, d, lambda),
            config.max_epochs,
            config.tolerance,
            LBFGS_MEMORY,
        ),
        Penalty::L1 => proximal_gradient(
            &mut params,
            |p, g| cross_entropy(p, g, &samples, &class_weights, d, 0.0),
            lambda,
            |i| i < kd,
            config.max_epochs,
            config.tolerance,
        ),
    };
    if let Some(last) = trace.last().filter(|l| !l.is_finite()) {
        return Err(ModelError::Diverged { epoch: trace.len(), loss: *last });
    }
    model.set_flat_params(&params);
    Ok((model, trace))
}

impl ProbabilisticClassifier for LinearModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| {
                let row = &self.weights[c * self.n_features..(c + 1) * self.n_features];
                self.bias[c] + x.entries().iter().map(|&(j, v)| v * row[j]).sum::<f64>()
            })
            .collect()
    }
}

impl Differentiable for LinearModel {
    fn parameters(&self) -> Vec<f64> {
        self.flat_params()
    }

    fn set_parameters(&mut self, params: &[f64]) {
        self.set_flat_params(params);
    }

    /// The training objective evaluated on `batch` alone (l1 contributes
    /// its subgradient).
    fn loss_and_gradient(&self, batch: &Samples<'_>, grad: &mut [f64]) -> f64 {
        let n = batch.len() as f64;
        let lambda = 1.0 / (self.c * n);
        let params = self.flat_params();
        match self.penalty {
            Penalty::L2 => cross_entropy(&params, grad, batch, &self.class_weights, self.n_features, lambda),
            Penalty::L1 => {
                let kd = self.weights.len();
                let mut loss = cross_entropy(&params, grad, batch, &self.class_weights, self.n_features, 0.0);
                for (g, w) in grad[..kd].iter_mut().zip(&self.weights) {
                    if *w != 0.0 {
                        *g += lambda * w.signum();
                    }
                    loss += lambda * w.abs();
                }
                loss
            }
        }
    }
}
