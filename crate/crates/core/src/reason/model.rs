use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::provider::{BowProvider, EmbeddingProvider, ProviderSpec};
use super::ReasonError;
use crate::artifact;
use crate::evalsim::rank_indices;
use crate::features::FeatureVector;
use crate::models::{train_logistic, train_mlp, Classifier, Penalty, ProbabilisticClassifier, Samples, TrainConfig};
use crate::routing::ReasonScore;
use crate::tabular::{FeatureSchema, FittedTransform, TabularRecord};
use crate::text::{BowEncoder, StopWords, Weighting};

pub const REASON_MODEL_KIND: &str = "reason_model";

/// One labelled ticket: first customer message plus profile features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonExample {
    pub id: String,
    pub text: String,
    pub profile: TabularRecord,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassFilter {
    pub min_count: usize,
    /// Sorted; the position is the class index.
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
    pub counts: BTreeMap<String, usize>,
}

impl ClassFilter {
    pub fn keeps(&self, reason: &str) -> bool {
        self.kept.binary_search_by(|k| k.as_str().cmp(reason)).is_ok()
    }

    pub fn index(&self, reason: &str) -> Option<usize> {
        self.kept.binary_search_by(|k| k.as_str().cmp(reason)).ok()
    }

    /// Removes rows whose label was dropped.
    pub fn apply<'a>(&self, examples: &'a [ReasonExample]) -> Vec<&'a ReasonExample> {
        examples.iter().filter(|e| self.keeps(&e.reason)).collect()
    }
}

/// Keeps the labels with at least `min_count` training rows.
pub fn filter_classes<'a>(
    labels: impl IntoIterator<Item = &'a str>,
    min_count: usize,
) -> Result<ClassFilter, ReasonError> {
    if min_count == 0 {
        return Err(ReasonError::InvalidMinCount);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l.to_owned()).or_default() += 1;
    }
    let (kept, dropped): (Vec<_>, Vec<_>) = counts.iter().partition(|(_, &c)| c >= min_count);
    let kept: Vec<String> = kept.into_iter().map(|(k, _)| k.clone()).collect();
    let dropped: Vec<String> = dropped.into_iter().map(|(k, _)| k.clone()).collect();
    if kept.is_empty() {
        return Err(ReasonError::EmptyKeptSet(min_count));
    }
    log::info!("class filter (min {min_count}): kept {}, dropped {}", kept.len(), dropped.len());
    Ok(ClassFilter { min_count, kept, dropped, counts })
}

/// Runtime feature builder: `[text representation ‖ encoded profile]`.
#[derive(Clone)]
pub struct Featurizer {
    pub provider: Option<Arc<dyn EmbeddingProvider>>,
    pub tabular: Option<FittedTransform>,
}

impl std::fmt::Debug for Featurizer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Featurizer")
            .field("provider", &self.provider.as_ref().map(|p| p.kind()))
            .field("tabular", &self.tabular.as_ref().map(FittedTransform::dimension))
            .finish()
    }
}

impl Featurizer {
    pub fn text_dimension(&self) -> usize {
        self.provider.as_ref().map_or(0, |p| p.dimension())
    }

    pub fn dimension(&self) -> usize {
        self.text_dimension() + self.tabular.as_ref().map_or(0, FittedTransform::dimension)
    }

    pub fn featurize(
        &self,
        id: Option<&str>,
        text: &str,
        profile: &TabularRecord,
    ) -> Result<FeatureVector, ReasonError> {
        let text_part = match &self.provider {
            Some(p) => {
                let v = p.embed(id, text)?;
                if v.dimension() != p.dimension() {
                    return Err(ReasonError::DimensionMismatch { expected: p.dimension(), found: v.dimension() });
                }
                v
            }
            None => FeatureVector::zeros(0),
        };
        Ok(match &self.tabular {
            Some(t) => text_part.concat(&FeatureVector::from_dense(&t.transform(profile))),
            None => text_part,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BowSettings {
    pub ngram_max: usize,
    pub max_size: usize,
    pub weighting: Weighting,
    pub truncation: Option<usize>,
}

impl Default for BowSettings {
    /// Unigram counts over a 5000-term vocabulary, 64 tokens per message.
    fn default() -> Self {
        BowSettings { ngram_max: 1, max_size: 5000, weighting: Weighting::Counts, truncation: Some(64) }
    }
}

/// Where the text part of the features comes from.
#[derive(Clone)]
pub enum TextFeatures {
    None,
    /// Fit a bag-of-words encoder on the training texts.
    Bow(BowSettings),
    /// Use an already configured provider.
    Provider(Arc<dyn EmbeddingProvider>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Head {
    Linear { penalty: Penalty, c: f64 },
    Mlp { hidden: Vec<usize> },
}

impl Default for Head {
    fn default() -> Self {
        Head::Mlp { hidden: vec![256] }
    }
}

#[derive(Clone)]
pub struct ReasonTrainOptions {
    pub text: TextFeatures,
    /// `None` leaves profile features out.
    pub schema: Option<FeatureSchema>,
    pub head: Head,
    pub train: TrainConfig,
    pub min_count: usize,
    pub stopwords: StopWords,
}

impl Default for ReasonTrainOptions {
    fn default() -> Self {
        ReasonTrainOptions {
            text: TextFeatures::Bow(BowSettings::default()),
            schema: None,
            head: Head::default(),
            train: TrainConfig { seed: 42, ..TrainConfig::default() },
            min_count: 50,
            stopwords: StopWords::portuguese(),
        }
    }
}

/// The persisted part of a trained reason classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonModel {
    pub classes: Vec<String>,
    pub text: Option<ProviderSpec>,
    pub text_dimension: usize,
    pub tabular: Option<FittedTransform>,
    pub classifier: Classifier,
    pub filter: ClassFilter,
}

impl ReasonModel {
    pub fn save(&self, path: &Path) -> Result<(), ReasonError> {
        Ok(artifact::write(path, REASON_MODEL_KIND, self)?)
    }

    pub fn load(path: &Path) -> Result<Self, ReasonError> {
        Ok(artifact::read(path, REASON_MODEL_KIND)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub top: Vec<ReasonScore>,
    /// Over all kept classes, in class-index order.
    pub probabilities: Vec<f64>,
}

/// The `k` most probable classes; equal probabilities go to the lower index.
pub fn top_reasons(probabilities: &[f64], classes: &[String], k: usize) -> Result<Vec<ReasonScore>, ReasonError> {
    if k == 0 || k > classes.len() {
        return Err(ReasonError::InvalidK);
    }
    Ok(rank_indices(probabilities)
        .into_iter()
        .take(k)
        .map(|i| ReasonScore { reason: classes[i].clone(), probability: probabilities[i] })
        .collect())
}

/// A trained model with its runtime provider attached. Immutable and safe
/// to share between threads.
#[derive(Clone, Debug)]
pub struct ReasonClassifier {
    model: ReasonModel,
    featurizer: Featurizer,
}

impl ReasonClassifier {
    /// Attaches the provider described by the model.
    pub fn new(model: ReasonModel) -> Result<Self, ReasonError> {
        let provider = model.text.as_ref().map(ProviderSpec::instantiate).transpose()?;
        Self::with_provider(model, provider)
    }

    /// Attaches a caller-supplied provider (for example a different
    /// embedding service address). Its dimension must match training.
    pub fn with_provider(
        model: ReasonModel,
        provider: Option<Arc<dyn EmbeddingProvider>>,
    ) -> Result<Self, ReasonError> {
        let found = provider.as_ref().map_or(0, |p| p.dimension());
        if found != model.text_dimension {
            return Err(ReasonError::DimensionMismatch { expected: model.text_dimension, found });
        }
        let featurizer = Featurizer { provider, tabular: model.tabular.clone() };
        if featurizer.dimension() != model.classifier.n_features() {
            return Err(ReasonError::DimensionMismatch {
                expected: model.classifier.n_features(),
                found: featurizer.dimension(),
            });
        }
        Ok(ReasonClassifier { model, featurizer })
    }

    pub fn load(path: &Path) -> Result<Self, ReasonError> {
        Self::new(ReasonModel::load(path)?)
    }

    pub fn model(&self) -> &ReasonModel {
        &self.model
    }

    pub fn featurizer(&self) -> &Featurizer {
        &self.featurizer
    }

    pub fn classes(&self) -> &[String] {
        &self.model.classes
    }

    pub fn probabilities(
        &self,
        id: Option<&str>,
        text: &str,
        profile: &TabularRecord,
    ) -> Result<Vec<f64>, ReasonError> {
        let x = self.featurizer.featurize(id, text, profile)?;
        Ok(self.model.classifier.predict_proba(&x)?)
    }

    pub fn predict(
        &self,
        id: Option<&str>,
        text: &str,
        profile: &TabularRecord,
        k: usize,
    ) -> Result<Prediction, ReasonError> {
        if k == 0 || k > self.model.classes.len() {
            return Err(ReasonError::InvalidK);
        }
        let probabilities = self.probabilities(id, text, profile)?;
        let top = top_reasons(&probabilities, &self.model.classes, k)?;
        Ok(Prediction { top, probabilities })
    }

    /// Probability vectors for a batch of examples.
    pub fn predict_all(&self, examples: &[&ReasonExample]) -> Result<Vec<Vec<f64>>, ReasonError> {
        examples.iter().map(|e| self.probabilities(Some(&e.id), &e.text, &e.profile)).collect()
    }
}

pub struct ReasonTraining {
    pub classifier: ReasonClassifier,
    pub train_size: usize,
    pub validation_size: usize,
}

fn featurize_all(f: &Featurizer, rows: &[&ReasonExample]) -> Result<Vec<FeatureVector>, ReasonError> {
    rows.iter().map(|e| f.featurize(Some(&e.id), &e.text, &e.profile)).collect()
}

/// Filters classes on `train`, fits the text encoder and the tabular
/// transform on `train` only, then trains the head. `validation` (after
/// the same filter) drives early stopping of the perceptron.
pub fn train_reason_model(
    train: &[ReasonExample],
    validation: &[ReasonExample],
    options: &ReasonTrainOptions,
) -> Result<ReasonTraining, ReasonError> {
    let filter = filter_classes(train.iter().map(|e| e.reason.as_str()), options.min_count)?;
    let train_rows = filter.apply(train);
    let val_rows = filter.apply(validation);

    let provider: Option<Arc<dyn EmbeddingProvider>> = match &options.text {
        TextFeatures::None => None,
        TextFeatures::Provider(p) => Some(p.clone()),
        TextFeatures::Bow(s) => Some(Arc::new(BowProvider {
            encoder: BowEncoder::fit(
                train_rows.iter().map(|e| e.text.as_str()),
                options.stopwords.clone(),
                s.ngram_max,
                s.max_size,
                s.weighting,
                s.truncation,
            )?,
        })),
    };
    let tabular = match &options.schema {
        Some(schema) => {
            let records: Vec<TabularRecord> = train_rows.iter().map(|e| e.profile.clone()).collect();
            Some(FittedTransform::fit(schema, &records)?)
        }
        None => None,
    };
    if provider.is_none() && tabular.is_none() {
        return Err(ReasonError::NoFeatures);
    }
    let featurizer = Featurizer { provider, tabular };
    let label = |rows: &[&ReasonExample]| -> Vec<usize> {
        rows.iter().map(|e| filter.index(&e.reason).expect("filtered")).collect()
    };
    let (xs, ys) = (featurize_all(&featurizer, &train_rows)?, label(&train_rows));
    let k = filter.kept.len();
    let classifier: Classifier = match &options.head {
        Head::Linear { penalty, c } => train_logistic(Samples::new(&xs, &ys, k), &options.train, *penalty, *c)?.into(),
        Head::Mlp { hidden } => {
            let (vx, vy) = (featurize_all(&featurizer, &val_rows)?, label(&val_rows));
            let val = (!vx.is_empty()).then(|| Samples::new(&vx, &vy, k));
            train_mlp(Samples::new(&xs, &ys, k), val, &options.train, hidden)?.into()
        }
    };
    let model = ReasonModel {
        classes: filter.kept.clone(),
        text: featurizer.provider.as_ref().map(|p| p.spec()),
        text_dimension: featurizer.text_dimension(),
        tabular: featurizer.tabular.clone(),
        classifier,
        filter,
    };
    Ok(ReasonTraining {
        classifier: ReasonClassifier { model, featurizer },
        train_size: xs.len(),
        validation_size: val_rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reason::{EmbeddingTable, FileProvider};
    use crate::tabular::Column;

    fn ex(id: &str, text: &str, persona: &str, reason: &str) -> ReasonExample {
        ReasonExample {
            id: id.into(),
            text: text.into(),
            profile: TabularRecord::new().with_category("persona", persona),
            reason: reason.into(),
        }
    }

    fn ambiguous_corpus() -> Vec<ReasonExample> {
        let mut out = Vec::new();
        for i in 0..40 {
            out.push(ex(&format!("a{i}"), "preciso cancelar a visita de amanhã", "photographer", "ft_cancel"));
            out.push(ex(&format!("b{i}"), "preciso cancelar a visita de amanhã", "tenant", "vi_cancel"));
            out.push(ex(&format!("c{i}"), "meu boleto não chegou", "tenant", "pg_boleto"));
        }
        out
    }

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![Column::categorical("persona", &[])]).unwrap()
    }

    #[test]
    fn filter_keeps_boundary_count() {
        let labels: Vec<&str> = std::iter::repeat_n("a", 60)
            .chain(std::iter::repeat_n("b", 49))
            .chain(std::iter::repeat_n("c", 50))
            .collect();
        let f = filter_classes(labels.iter().copied(), 50).unwrap();
        assert_eq!(f.kept, ["a", "c"]);
        assert_eq!(f.dropped, ["b"]);
        assert_eq!(filter_classes(labels.iter().copied(), 1).unwrap().kept.len(), 3);
        assert!(matches!(filter_classes(labels.iter().copied(), 0), Err(ReasonError::InvalidMinCount)));
        assert!(matches!(filter_classes(labels.iter().copied(), 61), Err(ReasonError::EmptyKeptSet(61))));
    }

    #[test]
    fn top_reasons_orders_and_breaks_ties_low() {
        let classes: Vec<String> = ["r1", "r2", "r3"].map(String::from).to_vec();
        let top = top_reasons(&[0.2, 0.5, 0.3], &classes, 3).unwrap();
        assert_eq!(top.iter().map(|r| r.reason.as_str()).collect::<Vec<_>>(), ["r2", "r3", "r1"]);
        let tie = top_reasons(&[0.4, 0.2, 0.4], &classes, 1).unwrap();
        assert_eq!(tie[0].reason, "r1");
        assert!(top_reasons(&[1.0, 0.0, 0.0], &classes, 4).is_err());
        assert!(top_reasons(&[1.0, 0.0, 0.0], &classes, 0).is_err());
    }

    #[test]
    fn profile_disambiguates_identical_text() {
        let data = ambiguous_corpus();
        let options = ReasonTrainOptions {
            schema: Some(schema()),
            head: Head::Linear { penalty: Penalty::L2, c: 10.0 },
            min_count: 10,
            ..Default::default()
        };
        let t = train_reason_model(&data, &[], &options).unwrap();
        let text = "preciso cancelar a visita de amanhã";
        let photo = TabularRecord::new().with_category("persona", "photographer");
        let tenant = TabularRecord::new().with_category("persona", "tenant");
        let a = t.classifier.predict(None, text, &photo, 1).unwrap();
        let b = t.classifier.predict(None, text, &tenant, 3).unwrap();
        assert_eq!(a.top[0].reason, "ft_cancel");
        assert_eq!(b.top[0].reason, "vi_cancel");
        assert!((b.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn model_round_trips_through_artifact() {
        let data = ambiguous_corpus();
        let options = ReasonTrainOptions {
            schema: Some(schema()),
            head: Head::Mlp { hidden: vec![8] },
            train: TrainConfig { seed: 1, max_epochs: 5, ..TrainConfig::default() },
            min_count: 10,
            ..Default::default()
        };
        let t = train_reason_model(&data, &data[..12], &options).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("reason.model");
        t.classifier.model().save(&path).unwrap();
        let loaded = ReasonClassifier::load(&path).unwrap();
        assert_eq!(loaded.model(), t.classifier.model());
        let p = TabularRecord::new().with_category("persona", "tenant");
        assert_eq!(
            loaded.probabilities(None, "meu boleto", &p).unwrap(),
            t.classifier.probabilities(None, "meu boleto", &p).unwrap()
        );
    }

    #[test]
    fn file_provider_missing_id_fails_whole_vector() {
        let mut table = EmbeddingTable::new(2);
        table.insert("t-1", &[1.0, 0.0]).unwrap();
        let f = Featurizer { provider: Some(Arc::new(FileProvider::in_memory(table))), tabular: None };
        assert_eq!(f.featurize(Some("t-1"), "", &TabularRecord::new()).unwrap().dimension(), 2);
        assert!(matches!(
            f.featurize(Some("t-99"), "", &TabularRecord::new()),
            Err(ReasonError::MissingEmbedding(id)) if id == "t-99"
        ));
    }

    #[test]
    fn bow_truncation_limits_counted_tokens() {
        let words: Vec<String> = (0..70).map(|i| format!("w{i}")).collect();
        let text = words.join(" ");
        let enc = BowEncoder::fit([text.as_str()], StopWords::empty(), 1, 100, Weighting::Counts, Some(64)).unwrap();
        assert_eq!(enc.dimension(), 64);
        let enc_all = BowEncoder::fit([text.as_str()], StopWords::empty(), 1, 100, Weighting::Counts, None).unwrap();
        let bow = BowProvider { encoder: enc_all.clone() };
        let truncated = BowEncoder { truncation: Some(64), ..enc_all };
        let v = truncated.encode(&text);
        assert_eq!(v.to_dense().iter().sum::<f64>(), 64.0);
        assert_eq!(bow.embed(None, &text).unwrap().to_dense().iter().sum::<f64>(), 70.0);
    }
}
