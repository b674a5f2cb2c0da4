//! Binary gate deciding whether a message carries enough context to act on.
//!
//! Annotations use four labels; `has_context` is the positive class,
//! `no_context` and `low_value` are negative, and `returning_client` rows
//! are dropped before training.

use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::evalsim::{search, Config, EvalError, ParamSpec, SearchResult, SearchSpace, Strategy};
use crate::features::FeatureVector;
use crate::models::{
    accuracy, train_logistic, ClassWeight, LinearModel, ModelError, Penalty, ProbabilisticClassifier, Samples,
    TrainConfig,
};
use crate::text::{BowEncoder, StopWords, TextError, Weighting};

pub const CONTEXT_MODEL_KIND: &str = "context_model";

#[derive(Debug, Error)]
pub enum ContextError {
    #[error("line {line}: unknown context label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("degenerate dataset: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Search(#[from] EvalError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextLabel {
    HasContext,
    NoContext,
    ReturningClient,
    LowValue,
}

impl ContextLabel {
    pub const ALL: [ContextLabel; 4] =
        [ContextLabel::HasContext, ContextLabel::NoContext, ContextLabel::ReturningClient, ContextLabel::LowValue];

    pub fn as_str(self) -> &'static str {
        match self {
            ContextLabel::HasContext => "has_context",
            ContextLabel::NoContext => "no_context",
            ContextLabel::ReturningClient => "returning_client",
            ContextLabel::LowValue => "low_value",
        }
    }

    /// `Some(true)` for positive, `Some(false)` for negative, `None` when
    /// the row is excluded from training.
    pub fn binary(self) -> Option<bool> {
        match self {
            ContextLabel::HasContext => Some(true),
            ContextLabel::NoContext | ContextLabel::LowValue => Some(false),
            ContextLabel::ReturningClient => None,
        }
    }
}

impl FromStr for ContextLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContextLabel::ALL.into_iter().find(|l| l.as_str() == s).ok_or_else(|| s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextAnnotation {
    pub message: String,
    pub label: ContextLabel,
}

/// Writes annotations as CSV with a `message,label` header.
pub fn write_annotations<W: Write>(annotations: &[ContextAnnotation], writer: W) -> Result<(), ContextError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["message", "label"])?;
    for a in annotations {
        w.write_record([a.message.as_str(), a.label.as_str()])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_annotations<R: Read>(reader: R) -> Result<Vec<ContextAnnotation>, ContextError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| ContextError::Malformed { line: 1, message: format!("missing column {name:?}") })
    };
    let (mi, li) = (col("message")?, col("label")?);
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let label = rec[li].parse().map_err(|label| ContextError::UnknownLabel { line, label })?;
        out.push(ContextAnnotation { message: rec[mi].to_owned(), label });
    }
    Ok(out)
}

/// Binary view of an annotation corpus.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinaryDataset {
    pub texts: Vec<String>,
    /// 1 = has context, 0 = not.
    pub labels: Vec<usize>,
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
}

impl BinaryDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

pub fn map_labels(annotations: &[ContextAnnotation]) -> BinaryDataset {
    let mut d = BinaryDataset::default();
    for a in annotations {
        match a.label.binary() {
            Some(pos) => {
                d.texts.push(a.message.clone());
                d.labels.push(usize::from(pos));
                if pos {
                    d.positives += 1;
                } else {
                    d.negatives += 1;
                }
            }
            None => d.dropped += 1,
        }
    }
    if d.is_empty() {
        log::warn!("no trainable context annotations ({} dropped)", d.dropped);
    }
    log::info!("context labels: {} positive, {} negative, {} dropped", d.positives, d.negatives, d.dropped);
    d
}

/// Hyperparameters of the gate's logistic regression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextHyper {
    pub c: f64,
    pub penalty: Penalty,
    pub class_weight: ClassWeight,
}

impl Default for ContextHyper {
    fn default() -> Self {
        ContextHyper { c: 1.0, penalty: Penalty::L2, class_weight: ClassWeight::Balanced }
    }
}

impl ContextHyper {
    fn from_config(c: &Config) -> Result<Self, String> {
        let get = |k: &str| c.get(k).ok_or_else(|| format!("missing {k}"));
        Ok(ContextHyper {
            c: get("c")?.as_f64().ok_or("c must be a number")?,
            penalty: serde_json::from_value(get("penalty")?.clone()).map_err(|e| e.to_string())?,
            class_weight: serde_json::from_value(get("class_weight")?.clone()).map_err(|e| e.to_string())?,
        })
    }

    fn to_config(&self) -> Config {
        [
            ("c".to_owned(), Value::from(self.c)),
            ("penalty".to_owned(), serde_json::to_value(self.penalty).expect("serializes")),
            ("class_weight".to_owned(), serde_json::to_value(&self.class_weight).expect("serializes")),
        ]
        .into()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextModel {
    pub encoder: BowEncoder,
    pub classifier: LinearModel,
    pub threshold: f64,
    pub hyper: ContextHyper,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextVerdict {
    pub has_context: bool,
    pub p_positive: f64,
}

impl ContextModel {
    pub fn features(&self, text: &str) -> FeatureVector {
        self.encoder.encode(text)
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn save(&self, path: &Path) -> Result<(), ContextError> {
        Ok(artifact::write(path, CONTEXT_MODEL_KIND, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ContextError> {
        Ok(artifact::read(path, CONTEXT_MODEL_KIND)?)
    }
}

pub fn evaluate_context(model: &ContextModel, text: &str) -> ContextVerdict {
    let x = model.features(text);
    let p = model.classifier.predict_proba(&x).expect("encoder output matches the classifier")[1];
    ContextVerdict { has_context: p >= model.threshold, p_positive: p }
}

pub const CONTEXT_VOCABULARY: usize = 5000;
pub const CONTEXT_NGRAM_MAX: usize = 3;

/// Fits encoder and classifier on all of `texts` with fixed hyperparameters.
pub fn fit_context_model(
    texts: &[&str],
    labels: &[usize],
    hyper: &ContextHyper,
    stopwords: &StopWords,
    threshold: f64,
) -> Result<ContextModel, ContextError> {
    let encoder = BowEncoder::fit(
        texts.iter().copied(),
        stopwords.clone(),
        CONTEXT_NGRAM_MAX,
        CONTEXT_VOCABULARY,
        Weighting::Counts,
        None,
    )?;
    let xs: Vec<FeatureVector> = texts.iter().map(|t| encoder.encode(t)).collect();
    let config = TrainConfig { class_weight: hyper.class_weight.clone(), ..TrainConfig::default() };
    let classifier = train_logistic(Samples::new(&xs, labels, 2), &config, hyper.penalty, hyper.c)?;
    Ok(ContextModel { encoder, classifier, threshold, hyper: hyper.clone() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextTrainOptions {
    pub seed: u64,
    pub budget: usize,
    pub strategy: Strategy,
    /// Held out for the final accuracy estimate.
    pub test_fraction: f64,
    /// Carved from the training part for the hyperparameter search.
    pub validation_fraction: f64,
    pub threshold: f64,
}

impl Default for ContextTrainOptions {
    fn default() -> Self {
        ContextTrainOptions {
            seed: 42,
            budget: 20,
            strategy: Strategy::Random { seed: 42 },
            test_fraction: 0.2,
            validation_fraction: 0.2,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContextReport {
    pub positives: usize,
    pub negatives: usize,
    pub dropped: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub validation_accuracy: f64,
    pub test_accuracy: f64,
    pub default_validation_accuracy: f64,
}

pub struct ContextTraining {
    pub model: ContextModel,
    pub report: ContextReport,
    pub search: SearchResult,
}

/// The search space used by [`train_context_model`]: C on a log scale,
/// penalty type and class weighting. The default hyperparameters are
/// always evaluated first.
pub fn context_search_space(budget: usize) -> SearchSpace {
    SearchSpace::new(budget)
        .param("c", ParamSpec::log_uniform(1e-2, 1e2, 9))
        .param("penalty", ParamSpec::choice([Value::from("l1"), Value::from("l2")]))
        .param("class_weight", ParamSpec::choice([Value::from("none"), Value::from("balanced")]))
        .with_initial(ContextHyper::default().to_config())
}

fn split_indices(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let held = ((fraction * n as f64).round() as usize).min(n);
    let rest = idx.split_off(held);
    (rest, idx)
}

/// Seeded train/test split, hyperparameter search on a validation slice
/// of the training part, then a refit on the whole training part.
pub fn train_context_model(
    annotations: &[ContextAnnotation],
    options: &ContextTrainOptions,
    stopwords: &StopWords,
) -> Result<ContextTraining, ContextError> {
    let data = map_labels(annotations);
    if data.positives == 0 || data.negatives == 0 {
        return Err(ContextError::Degenerate(format!(
            "need both classes, have {} positive and {} negative",
            data.positives, data.negatives
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let (train_idx, test_idx) = split_indices(data.len(), options.test_fraction, &mut rng);
    let (fit_pos, val_pos) = split_indices(train_idx.len(), options.validation_fraction, &mut rng);
    let pick = |idx: &[usize]| -> (Vec<&str>, Vec<usize>) {
        (idx.iter().map(|&i| data.texts[i].as_str()).collect(), idx.iter().map(|&i| data.labels[i]).collect())
    };
    let (fit_x, fit_y) = pick(&fit_pos.iter().map(|&p| train_idx[p]).collect::<Vec<_>>());
    let (val_x, val_y) = pick(&val_pos.iter().map(|&p| train_idx[p]).collect::<Vec<_>>());
    let (train_x, train_y) = pick(&train_idx);
    let (test_x, test_y) = pick(&test_idx);
    for (name, ys) in [("search-training", &fit_y), ("validation", &val_y), ("test", &test_y)] {
        if !(ys.contains(&0) && ys.contains(&1)) {
            return Err(ContextError::Degenerate(format!("{name} split lacks a class")));
        }
    }

    let score = |model: &ContextModel, xs: &[&str], ys: &[usize]| -> f64 {
        let feats: Vec<FeatureVector> = xs.iter().map(|t| model.features(t)).collect();
        accuracy(&model.classifier, &Samples::new(&feats, ys, 2)).unwrap_or(0.0)
    };
    let space = context_search_space(options.budget);
    let result = search(&space, options.strategy, |cfg| {
        let hyper = ContextHyper::from_config(cfg)?;
        let m = fit_context_model(&fit_x, &fit_y, &hyper, stopwords, options.threshold).map_err(|e| e.to_string())?;
        Ok::<_, String>(score(&m, &val_x, &val_y))
    })?;
    let default_validation_accuracy = result.trace[0].score.unwrap_or(0.0);
    let best = ContextHyper::from_config(&result.best).map_err(ContextError::Degenerate)?;
    let model = fit_context_model(&train_x, &train_y, &best, stopwords, options.threshold)?;
    let report = ContextReport {
        positives: data.positives,
        negatives: data.negatives,
        dropped: data.dropped,
        train_size: train_x.len(),
        test_size: test_x.len(),
        validation_accuracy: result.best_score,
        test_accuracy: score(&model, &test_x, &test_y),
        default_validation_accuracy,
    };
    Ok(ContextTraining { model, report, search: result })
}
