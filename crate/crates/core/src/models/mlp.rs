use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gradcheck::Differentiable;
use super::optim::Adam;
use super::{accuracy, log_sum_exp, softmax_in_place, ModelError, ProbabilisticClassifier, Samples, TrainConfig};
use crate::features::FeatureVector;

/// Fully connected layer; weights stored input-major (`n_in × n_out`) so a
/// sparse input touches contiguous rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub n_in: usize,
    pub n_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn forward_dense(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for (j, &a) in input.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = &self.weights[j * self.n_out..(j + 1) * self.n_out];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += a * w);
        }
    }

    fn forward_sparse(&self, input: &FeatureVector, out: &mut Vec<f64>) {
        out.clear();
        out.extend_from_slice(&self.bias);
        for &(j, a) in input.entries() {
            let row = &self.weights[j * self.n_out..(j + 1) * self.n_out];
            out.iter_mut().zip(row).for_each(|(o, w)| *o += a * w);
        }
    }
}

/// Multilayer perceptron: rectifier hidden layers, softmax output.
///
/// With no hidden layers this is exactly multinomial logistic regression.
/// The training objective is `(1/N) Σ w_{y_i} · CE_i + (l2 / 2N) Σ ‖W‖²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
    n_classes: usize,
    class_weights: Vec<f64>,
    l2: f64,
}

impl MlpModel {
    /// Seeded fan-in-scaled uniform initialization: `U(±√(6/fan_in))` for
    /// rectifier layers and `U(±√(3/fan_in))` for the output layer; zero biases.
    pub fn init(n_features: usize, hidden: &[usize], n_classes: usize, rng: &mut impl Rng) -> Self {
        let mut sizes = vec![n_features];
        sizes.extend_from_slice(hidden);
        sizes.push(n_classes);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(l, w)| {
                let (n_in, n_out) = (w[0], w[1]);
                let gain = if l == last { 3.0 } else { 6.0 };
                let limit = (gain / n_in.max(1) as f64).sqrt();
                let weights = (0..n_in * n_out).map(|_| rng.random_range(-limit..=limit)).collect();
                Layer { n_in, n_out, weights, bias: vec![0.0; n_out] }
            })
            .collect();
        MlpModel { layers, n_classes, class_weights: vec![1.0; n_classes], l2: 0.0 }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.n_out).collect()
    }

    pub fn with_l2(mut self, l2: f64) -> Self {
        self.l2 = l2;
        self
    }

    pub fn permute_inputs(&self, source: &[usize]) -> MlpModel {
        let mut out = self.clone();
        let first = &self.layers[0];
        let n_out = first.n_out;
        for (i, &s) in source.iter().enumerate() {
            out.layers[0].weights[i * n_out..(i + 1) * n_out]
                .copy_from_slice(&first.weights[s * n_out..(s + 1) * n_out]);
        }
        out
    }

    fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Fills `acts[l]` with the output of layer `l` (rectified for hidden
    /// layers, raw logits for the last).
    fn forward(&self, x: &FeatureVector, acts: &mut Vec<Vec<f64>>) {
        acts.resize(self.layers.len(), Vec::new());
        for l in 0..self.layers.len() {
            let (prev, rest) = acts.split_at_mut(l);
            let out = &mut rest[0];
            if l == 0 {
                self.layers[0].forward_sparse(x, out);
            } else {
                self.layers[l].forward_dense(&prev[l - 1], out);
            }
            if l + 1 < self.layers.len() {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Adds the gradient of `cw · CE(x, y) · scale` to `grads` (one buffer
    /// per layer: weights then bias) and returns `cw · CE`.
    fn accumulate(
        &self,
        x: &FeatureVector,
        y: usize,
        cw: f64,
        scale: f64,
        acts: &mut Vec<Vec<f64>>,
        grads: &mut [(Vec<f64>, Vec<f64>)],
    ) -> f64 {
        self.forward(x, acts);
        let logits = acts.last_mut().unwrap();
        let loss = cw * (log_sum_exp(logits) - logits[y]);
        let mut delta = logits.clone();
        softmax_in_place(&mut delta);
        delta[y] -= 1.0;
        delta.iter_mut().for_each(|d| *d *= cw * scale);

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let (gw, gb) = &mut grads[l];
            gb.iter_mut().zip(&delta).for_each(|(g, d)| *g += d);
            if l == 0 {
                for &(j, a) in x.entries() {
                    let row = &mut gw[j * layer.n_out..(j + 1) * layer.n_out];
                    row.iter_mut().zip(&delta).for_each(|(g, d)| *g += a * d);
                }
            } else {
                let input = &acts[l - 1];
                let mut prev_delta = vec![0.0; layer.n_in];
                for (j, &a) in input.iter().enumerate() {
                    let wrow = &layer.weights[j * layer.n_out..(j + 1) * layer.n_out];
                    if a > 0.0 {
                        let grow = &mut gw[j * layer.n_out..(j + 1) * layer.n_out];
                        grow.iter_mut().zip(&delta).for_each(|(g, d)| *g += a * d);
                        prev_delta[j] = wrow.iter().zip(&delta).map(|(w, d)| w * d).sum();
                    }
                }
                delta = prev_delta;
            }
        }
        loss
    }

    fn zero_grads(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.layers.iter().map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()])).collect()
    }

    fn weight_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.weights).map(|w| w * w).sum()
    }

    fn batch_objective(&self, batch: &Samples<'_>, grads: &mut [(Vec<f64>, Vec<f64>)], n_total: f64) -> f64 {
        let scale = 1.0 / batch.len() as f64;
        let mut acts = Vec::new();
        let mut loss = 0.0;
        for (x, &y) in batch.features.iter().zip(batch.labels) {
            loss += self.accumulate(x, y, self.class_weights[y], scale, &mut acts, grads);
        }
        loss *= scale;
        if self.l2 > 0.0 {
            let coef = self.l2 / n_total;
            for (layer, (gw, _)) in self.layers.iter().zip(grads.iter_mut()) {
                gw.iter_mut().zip(&layer.weights).for_each(|(g, w)| *g += coef * w);
            }
            loss += 0.5 * coef * self.weight_sq();
        }
        loss
    }

    fn relu_pattern(&self, batch: &Samples<'_>) -> Vec<bool> {
        let mut acts = Vec::new();
        let mut pattern = Vec::new();
        for x in batch.features {
            self.forward(x, &mut acts);
            for a in &acts[..acts.len() - 1] {
                pattern.extend(a.iter().map(|v| *v > 0.0));
            }
        }
        pattern
    }
}

impl ProbabilisticClassifier for MlpModel {
    fn n_features(&self) -> usize {
        self.layers[0].n_in
    }

    fn n_classes(&self) -> usize {
        self.n_classes
    }

    fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward(x, &mut acts);
        acts.pop().unwrap()
    }
}

impl Differentiable for MlpModel {
    fn parameters(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    fn set_parameters(&mut self, params: &[f64]) {
        let mut pos = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&params[pos..pos + nw]);
            pos += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[pos..pos + nb]);
            pos += nb;
        }
    }

    fn loss_and_gradient(&self, batch: &Samples<'_>, grad: &mut [f64]) -> f64 {
        let mut grads = self.zero_grads();
        let loss = self.batch_objective(batch, &mut grads, batch.len() as f64);
        let mut pos = 0;
        for (gw, gb) in grads {
            grad[pos..pos + gw.len()].copy_from_slice(&gw);
            pos += gw.len();
            grad[pos..pos + gb.len()].copy_from_slice(&gb);
            pos += gb.len();
        }
        loss
    }

    fn kink_between(&self, batch: &Samples<'_>, a: &[f64], b: &[f64]) -> bool {
        if self.layers.len() == 1 {
            return false;
        }
        let mut ma = self.clone();
        ma.set_parameters(a);
        let mut mb = self.clone();
        mb.set_parameters(b);
        ma.relu_pattern(batch) != mb.relu_pattern(batch)
    }
}

/// Mini-batch Adam training with early stopping on validation top-1
/// accuracy (validation loss breaks ties). Returns the parameters of the
/// best validation epoch.
pub fn train_mlp(
    samples: Samples<'_>,
    validation: Option<Samples<'_>>,
    config: &TrainConfig,
    hidden_sizes: &[usize],
) -> Result<MlpModel, ModelError> {
    train_mlp_with_trace(samples, validation, config, hidden_sizes).map(|(m, _)| m)
}

/// As [`train_mlp`], also returning the mean training objective of each epoch.
pub fn train_mlp_with_trace(
    samples: Samples<'_>,
    validation: Option<Samples<'_>>,
    config: &TrainConfig,
    hidden_sizes: &[usize],
) -> Result<(MlpModel, Vec<f64>), ModelError> {
    config.validate()?;
    samples.validate(true)?;
    if hidden_sizes.contains(&0) {
        return Err(ModelError::InvalidConfig("hidden layer sizes must be positive".into()));
    }
    if let Some(v) = &validation {
        v.validate(false)?;
        if v.dimension() != samples.dimension() && !v.is_empty() {
            return Err(ModelError::DimensionMismatch { expected: samples.dimension(), found: v.dimension() });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = MlpModel::init(samples.dimension(), hidden_sizes, samples.n_classes, &mut rng);
    model.class_weights = config.class_weight.resolve(&samples)?;
    model.l2 = config.l2;

    // hold out a seeded validation slice when none is given
    let mut indices: Vec<usize> = (0..samples.len()).collect();
    let (held_x, held_y);
    let validation = match validation {
        Some(v) => Some(v),
        None if config.validation_fraction > 0.0 => {
            indices.shuffle(&mut rng);
            let n_val = ((samples.len() as f64) * config.validation_fraction).round() as usize;
            let n_val = n_val.min(samples.len().saturating_sub(samples.n_classes));
            let val_idx: Vec<usize> = indices.drain(..n_val).collect();
            indices.sort_unstable();
            (held_x, held_y) = samples.select(&val_idx);
            (n_val > 0).then(|| Samples::new(&held_x, &held_y, samples.n_classes))
        }
        None => None,
    };

    let n_total = indices.len() as f64;
    let n_params = model.num_params();
    let mut adam = Adam::new(n_params);
    let mut grads = model.zero_grads();
    let mut best: Option<(f64, f64, MlpModel)> = None;
    let mut stale = 0;
    let mut trace = Vec::new();
    let mut batch_x = Vec::with_capacity(config.batch_size);
    let mut batch_y = Vec::with_capacity(config.batch_size);

    for epoch in 0..config.max_epochs {
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in indices.chunks(config.batch_size) {
            batch_x.clear();
            batch_y.clear();
            for &i in chunk {
                batch_x.push(samples.features[i].clone());
                batch_y.push(samples.labels[i]);
            }
            let batch = Samples::new(&batch_x, &batch_y, samples.n_classes);
            grads.iter_mut().for_each(|(gw, gb)| {
                gw.iter_mut().for_each(|g| *g = 0.0);
                gb.iter_mut().for_each(|g| *g = 0.0);
            });
            let loss = model.batch_objective(&batch, &mut grads, n_total);
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss });
            }
            epoch_loss += loss * chunk.len() as f64;
            let corr = adam.begin_step();
            let mut offset = 0;
            for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads) {
                adam.update(offset, &mut layer.weights, gw, config.learning_rate, corr);
                offset += gw.len();
                adam.update(offset, &mut layer.bias, gb, config.learning_rate, corr);
                offset += gb.len();
            }
        }
        trace.push(epoch_loss / n_total);

        if let Some(val) = &validation {
            let acc = accuracy(&model, val)?;
            let vloss = mean_cross_entropy(&model, val);
            let improved = match &best {
                None => true,
                Some((ba, bl, _)) => acc > *ba || (acc == *ba && vloss < *bl),
            };
            if improved {
                best = Some((acc, vloss, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= config.patience {
                    break;
                }
            }
        }
    }
    let model = best.map_or(model, |(_, _, m)| m);
    Ok((model, trace))
}

fn mean_cross_entropy(model: &MlpModel, samples: &Samples<'_>) -> f64 {
    let total: f64 = samples
        .features
        .iter()
        .zip(samples.labels)
        .map(|(x, &y)| {
            let z = model.logits(x);
            log_sum_exp(&z) - z[y]
        })
        .sum();
    total / samples.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::gradient_check;

    fn xor() -> (Vec<FeatureVector>, Vec<usize>) {
        let x = [[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        (x.iter().map(|v| FeatureVector::from_dense(v)).collect(), vec![0, 1, 1, 0])
    }

    #[test]
    fn learns_xor() {
        let (x, y) = xor();
        let s = Samples::new(&x, &y, 2);
        let config = TrainConfig {
            max_epochs: 2000,
            batch_size: 4,
            learning_rate: 0.01,
            validation_fraction: 0.0,
            l2: 0.0,
            ..TrainConfig::default()
        };
        let m = train_mlp(s, None, &config, &[8]).unwrap();
        assert_eq!(accuracy(&m, &s).unwrap(), 1.0);
    }

    #[test]
    fn deterministic_given_seed() {
        let (x, y) = xor();
        let s = Samples::new(&x, &y, 2);
        let config = TrainConfig { max_epochs: 50, validation_fraction: 0.0, ..TrainConfig::default() };
        let a = train_mlp(s, None, &config, &[4]).unwrap();
        let b = train_mlp(s, None, &config, &[4]).unwrap();
        assert_eq!(a, b);
        let c = train_mlp(s, None, &TrainConfig { seed: 1, ..config }, &[4]).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<FeatureVector> = (0..8)
            .map(|_| FeatureVector::from_dense(&(0..5).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let y: Vec<usize> = (0..8).map(|i| i % 3).collect();
        let m = MlpModel::init(5, &[7, 6], 3, &mut rng).with_l2(0.1);
        let err = gradient_check(&m, &Samples::new(&x, &y, 3), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn rejects_zero_width_layer() {
        let (x, y) = xor();
        assert!(train_mlp(Samples::new(&x, &y, 2), None, &TrainConfig::default(), &[0]).is_err());
    }
}
