//! Trainable softmax classifiers: multinomial logistic regression and a
//! rectifier multilayer perceptron, both written against sparse
//! [`FeatureVector`] inputs.

mod gradcheck;
mod linear;
mod mlp;
mod optim;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::features::FeatureVector;

pub use gradcheck::{gradient_check, Differentiable};
pub use linear::{train_logistic, train_logistic_with_trace, LinearModel};
pub use mlp::{train_mlp, train_mlp_with_trace, Layer, MlpModel};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension mismatch: model expects {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("{features} feature vectors but {labels} labels")]
    LengthMismatch { features: usize, labels: usize },
    #[error("class {0} has no training samples")]
    ClassAbsent(usize),
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("need at least two classes, got {0}")]
    TooFewClasses(usize),
    #[error("need at least as many samples as classes ({classes}), got {samples}")]
    TooFewSamples { samples: usize, classes: usize },
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("finite-difference step must be in (0, 1e-2], got {0}")]
    InvalidEpsilon(f64),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

/// Borrowed labelled samples.
#[derive(Clone, Copy, Debug)]
pub struct Samples<'a> {
    pub features: &'a [FeatureVector],
    pub labels: &'a [usize],
    pub n_classes: usize,
}

impl<'a> Samples<'a> {
    pub fn new(features: &'a [FeatureVector], labels: &'a [usize], n_classes: usize) -> Self {
        Samples { features, labels, n_classes }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.features.first().map_or(0, FeatureVector::dimension)
    }

    /// Shape and label checks shared by every trainer. With
    /// `require_all_classes`, every class must occur at least once.
    pub fn validate(&self, require_all_classes: bool) -> Result<(), ModelError> {
        if self.features.len() != self.labels.len() {
            return Err(ModelError::LengthMismatch { features: self.features.len(), labels: self.labels.len() });
        }
        if self.n_classes < 2 {
            return Err(ModelError::TooFewClasses(self.n_classes));
        }
        let d = self.dimension();
        let mut counts = vec![0usize; self.n_classes];
        for (x, &y) in self.features.iter().zip(self.labels) {
            if x.dimension() != d {
                return Err(ModelError::DimensionMismatch { expected: d, found: x.dimension() });
            }
            if !x.is_finite() {
                return Err(ModelError::NonFiniteInput);
            }
            if y >= self.n_classes {
                return Err(ModelError::LabelOutOfRange { label: y, n_classes: self.n_classes });
            }
            counts[y] += 1;
        }
        if require_all_classes {
            if self.len() < self.n_classes {
                return Err(ModelError::TooFewSamples { samples: self.len(), classes: self.n_classes });
            }
            if let Some(c) = counts.iter().position(|&c| c == 0) {
                return Err(ModelError::ClassAbsent(c));
            }
        }
        Ok(())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_classes];
        for &y in self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Copies the samples at `indices`.
    pub fn select(&self, indices: &[usize]) -> (Vec<FeatureVector>, Vec<usize>) {
        (indices.iter().map(|&i| self.features[i].clone()).collect(), indices.iter().map(|&i| self.labels[i]).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    L1,
    L2,
}

/// How per-class loss weights are chosen.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassWeight {
    #[default]
    None,
    /// `w_c = N / (K · N_c)`.
    Balanced,
    Custom(Vec<f64>),
}

impl ClassWeight {
    pub fn resolve(&self, samples: &Samples<'_>) -> Result<Vec<f64>, ModelError> {
        let k = samples.n_classes;
        match self {
            ClassWeight::None => Ok(vec![1.0; k]),
            ClassWeight::Balanced => {
                let n = samples.len() as f64;
                Ok(samples
                    .class_counts()
                    .iter()
                    .map(|&c| if c == 0 { 0.0 } else { n / (k as f64 * c as f64) })
                    .collect())
            }
            ClassWeight::Custom(w) => {
                if w.len() != k || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(ModelError::InvalidConfig(format!(
                        "custom class weights must be {k} non-negative reals"
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

/// Training hyperparameters shared by both model families.
///
/// For logistic regression `max_epochs` bounds the number of full-batch
/// optimizer iterations; batch size, learning rate and patience only apply
/// to the perceptron.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub patience: usize,
    /// Fraction of the training set held out for early stopping when no
    /// explicit validation set is supplied. Zero disables early stopping.
    pub validation_fraction: f64,
    pub class_weight: ClassWeight,
    /// L2 coefficient for the perceptron; equivalent to `1/C` for the linear model.
    pub l2: f64,
    /// Convergence tolerance on the gradient for full-batch training.
    pub tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            max_epochs: 200,
            batch_size: 128,
            learning_rate: 1e-3,
            patience: 5,
            validation_fraction: 0.1,
            class_weight: ClassWeight::None,
            l2: 1e-4,
            tolerance: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_owned()));
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be positive");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must be in [0, 1)");
        }
        if !(self.l2 >= 0.0 && self.l2.is_finite()) {
            return bad("l2 must be non-negative");
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return bad("tolerance must be positive");
        }
        Ok(())
    }
}

/// In-place numerically stable softmax (max subtracted before exponentiation).
/// Outputs are floored at the smallest positive normal so they stay strictly positive.
pub fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in logits.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in logits.iter_mut() {
        *z = (*z / sum).max(f64::MIN_POSITIVE);
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    out
}

/// `log Σ exp(z)` without overflow.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Common inference surface.
pub trait ProbabilisticClassifier {
    fn n_features(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn logits(&self, x: &FeatureVector) -> Vec<f64>;

    fn predict_proba(&self, x: &FeatureVector) -> Result<Vec<f64>, ModelError> {
        if x.dimension() != self.n_features() {
            return Err(ModelError::DimensionMismatch { expected: self.n_features(), found: x.dimension() });
        }
        if !x.is_finite() {
            return Err(ModelError::NonFiniteInput);
        }
        let mut z = self.logits(x);
        softmax_in_place(&mut z);
        Ok(z)
    }

    /// Index of the most probable class; ties go to the lower index.
    fn predict(&self, x: &FeatureVector) -> Result<usize, ModelError> {
        Ok(argmax(&self.predict_proba(x)?))
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction equals the label.
pub fn accuracy(model: &dyn ProbabilisticClassifier, samples: &Samples<'_>) -> Result<f64, ModelError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for (x, &y) in samples.features.iter().zip(samples.labels) {
        if model.predict(x)? == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Either model family, as stored on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Classifier {
    Linear(LinearModel),
    Mlp(MlpModel),
}

impl ProbabilisticClassifier for Classifier {
    fn n_features(&self) -> usize {
        match self {
            Classifier::Linear(m) => m.n_features(),
            Classifier::Mlp(m) => m.n_features(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            Classifier::Linear(m) => m.n_classes(),
            Classifier::Mlp(m) => m.n_classes(),
        }
    }

    fn logits(&self, x: &FeatureVector) -> Vec<f64> {
        match self {
            Classifier::Linear(m) => m.logits(x),
            Classifier::Mlp(m) => m.logits(x),
        }
    }
}

impl Classifier {
    /// Reorders input columns: new column `i` reads old column `source[i]`.
    pub fn permute_inputs(&self, source: &[usize]) -> Classifier {
        match self {
            Classifier::Linear(m) => Classifier::Linear(m.permute_inputs(source)),
            Classifier::Mlp(m) => Classifier::Mlp(m.permute_inputs(source)),
        }
    }
}

impl From<LinearModel> for Classifier {
    fn from(m: LinearModel) -> Self {
        Classifier::Linear(m)
    }
}

impl From<MlpModel> for Classifier {
    fn from(m: MlpModel) -> Self {
        Classifier::Mlp(m)
    }
}

pub const CLASSIFIER_KIND: &str = "classifier";

pub fn save_model(model: &Classifier, path: &Path) -> Result<(), ModelError> {
    Ok(artifact::write(path, CLASSIFIER_KIND, model)?)
}

pub fn load_model(path: &Path) -> Result<Classifier, ModelError> {
    Ok(artifact::read(path, CLASSIFIER_KIND)?)
}
