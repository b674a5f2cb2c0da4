//! File-based training stages behind the command-line tool: a corpus
//! directory in, a model directory out.
//!
//! A model directory holds `context.model`, `reason.model`,
//! `departments.toml` and, after calibration, `policy.json`.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::{
    read_annotations, train_context_model, ContextAnnotation, ContextError, ContextReport, ContextTrainOptions,
};
use crate::corpus::{read_dataset, CorpusError, CorpusFiles, Ticket, DEPARTMENTS_FILE};
use crate::evalsim::{out_of_time_split, EvalError, HeadRow, MetricReport, Split, SplitSpec};
use crate::experiment::{max_scores, model_decisions, reason_metrics, routing_table, ExperimentError};
use crate::models::TrainConfig;
use crate::pipeline::{Triage, CONTEXT_MODEL_FILE, POLICY_FILE, REASON_MODEL_FILE};
use crate::reason::{
    train_reason_model, BowSettings, EmbeddingProvider, FileProvider, Head, ReasonClassifier, ReasonError,
    ReasonTrainOptions, RemoteConfig, RemoteProvider, TextFeatures,
};
use crate::routing::{DepartmentMap, HeuristicLookup, RoutingError, RoutingPolicy};
use crate::tabular::{FeatureSchema, TabularError};
use crate::text::StopWords;

#[derive(Debug, Error)]
pub enum WorkflowError {
    #[error("{path}: {message}")]
    File { path: PathBuf, message: String },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
}

fn file_error(path: &Path, message: impl ToString) -> WorkflowError {
    WorkflowError::File { path: path.to_owned(), message: message.to_string() }
}

fn read_text(path: &Path) -> Result<String, WorkflowError> {
    fs::read_to_string(path).map_err(|e| file_error(path, e))
}

/// A corpus directory as written by `write_corpus`.
#[derive(Clone, Debug)]
pub struct CorpusDir {
    pub files: CorpusFiles,
    pub map: DepartmentMap,
    pub schema: FeatureSchema,
}

impl CorpusDir {
    pub fn open(dir: &Path) -> Result<Self, WorkflowError> {
        let files = CorpusFiles::new(dir);
        let map = DepartmentMap::from_toml(&read_text(&files.departments())?)
            .map_err(|e| file_error(&files.departments(), e))?;
        let schema = FeatureSchema::from_toml(&read_text(&files.schema())?)?;
        Ok(CorpusDir { files, map, schema })
    }

    pub fn tickets(&self) -> Result<Vec<Ticket>, WorkflowError> {
        let path = self.files.tickets();
        let f = File::open(&path).map_err(|e| file_error(&path, e))?;
        Ok(read_dataset(BufReader::new(f))?)
    }

    pub fn annotations(&self) -> Result<Vec<ContextAnnotation>, WorkflowError> {
        let path = self.files.context();
        let f = File::open(&path).map_err(|e| file_error(&path, e))?;
        Ok(read_annotations(BufReader::new(f))?)
    }

    pub fn heuristic(&self) -> Result<HeuristicLookup, WorkflowError> {
        let path = self.files.heuristic();
        HeuristicLookup::from_toml(&read_text(&path)?).map_err(|e| file_error(&path, e))
    }

    /// Chronological train/validation/test cut of the tickets.
    pub fn split(&self, spec: &SplitSpec) -> Result<Split<Ticket>, WorkflowError> {
        Ok(out_of_time_split(&self.tickets()?, spec)?)
    }
}

/// Trains the context gate and writes `context.model`.
pub fn train_context(
    corpus: &CorpusDir,
    model_dir: &Path,
    options: &ContextTrainOptions,
) -> Result<ContextReport, WorkflowError> {
    let t = train_context_model(&corpus.annotations()?, options, &StopWords::portuguese())?;
    fs::create_dir_all(model_dir).map_err(|e| file_error(model_dir, e))?;
    t.model.save(&model_dir.join(CONTEXT_MODEL_FILE))?;
    Ok(t.report)
}

/// Where the text half of the reason features comes from.
#[derive(Clone, Debug, PartialEq)]
pub enum TextSource {
    Bow(BowSettings),
    /// Precomputed embeddings keyed by ticket id.
    File(PathBuf),
    Remote(RemoteConfig),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReasonStage {
    pub text: TextSource,
    pub head: Head,
    pub train: TrainConfig,
    pub min_count: usize,
    pub split: SplitSpec,
}

impl Default for ReasonStage {
    fn default() -> Self {
        ReasonStage {
            text: TextSource::Bow(BowSettings::default()),
            head: Head::default(),
            train: TrainConfig { seed: 42, ..TrainConfig::default() },
            min_count: 50,
            split: SplitSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonStageReport {
    pub train_size: usize,
    pub validation_size: usize,
    pub kept: Vec<String>,
    pub dropped: Vec<String>,
}

/// Trains the reason classifier on the train split (validation split for
/// early stopping) and writes `reason.model` and `departments.toml`.
pub fn train_reason(
    corpus: &CorpusDir,
    model_dir: &Path,
    stage: &ReasonStage,
) -> Result<ReasonStageReport, WorkflowError> {
    let (train, validation, _) = corpus.split(&stage.split)?;
    let text = match &stage.text {
        TextSource::Bow(b) => TextFeatures::Bow(b.clone()),
        TextSource::File(path) => {
            let abs = fs::canonicalize(path).map_err(|e| file_error(path, e))?;
            TextFeatures::Provider(Arc::new(FileProvider::open(abs)?) as Arc<dyn EmbeddingProvider>)
        }
        TextSource::Remote(c) => TextFeatures::Provider(Arc::new(RemoteProvider::new(c.clone()))),
    };
    let options = ReasonTrainOptions {
        text,
        schema: Some(corpus.schema.clone()),
        head: stage.head.clone(),
        train: stage.train.clone(),
        min_count: stage.min_count,
        stopwords: StopWords::portuguese(),
    };
    let examples = |ts: &[Ticket]| ts.iter().map(Ticket::example).collect::<Vec<_>>();
    let t = train_reason_model(&examples(&train), &examples(&validation), &options)?;
    fs::create_dir_all(model_dir).map_err(|e| file_error(model_dir, e))?;
    t.classifier.model().save(&model_dir.join(REASON_MODEL_FILE))?;
    let dept = model_dir.join(DEPARTMENTS_FILE);
    fs::write(&dept, corpus.map.to_toml()).map_err(|e| file_error(&dept, e))?;
    let filter = &t.classifier.model().filter;
    Ok(ReasonStageReport {
        train_size: t.train_size,
        validation_size: t.validation_size,
        kept: filter.kept.clone(),
        dropped: filter.dropped.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub policy: RoutingPolicy,
    pub validation_size: usize,
    /// Share of validation chats at or above the threshold.
    pub validation_coverage: f64,
}

/// Calibrates the auto-routing threshold on the validation split and
/// writes `policy.json`.
pub fn calibrate(
    corpus: &CorpusDir,
    model_dir: &Path,
    coverage: f64,
    split: &SplitSpec,
) -> Result<CalibrationReport, WorkflowError> {
    let (_, validation, _) = corpus.split(split)?;
    let clf = ReasonClassifier::load(&model_dir.join(REASON_MODEL_FILE))?;
    let scores = max_scores(&clf, &validation, &corpus.map)?;
    let policy = RoutingPolicy::calibrate(&scores, coverage)?;
    let covered = scores.iter().filter(|&&s| s >= policy.threshold).count();
    let path = model_dir.join(POLICY_FILE);
    Triage::save_policy(&policy, model_dir).map_err(|e| file_error(&path, e))?;
    Ok(CalibrationReport {
        validation_coverage: covered as f64 / scores.len() as f64,
        validation_size: scores.len(),
        policy,
    })
}

/// Scores the stored reason model and routing policy on the test split.
pub fn evaluate(corpus: &CorpusDir, model_dir: &Path, split: &SplitSpec) -> Result<MetricReport, WorkflowError> {
    let (train, validation, test) = corpus.split(split)?;
    let clf = ReasonClassifier::load(&model_dir.join(REASON_MODEL_FILE))?;
    let policy_path = model_dir.join(POLICY_FILE);
    let policy: RoutingPolicy =
        serde_json::from_str(&read_text(&policy_path)?).map_err(|e| file_error(&policy_path, e))?;
    let m = reason_metrics(&clf, &test, &corpus.map)?;
    let head = HeadRow {
        model: "Stored model".into(),
        reason_top1: m.reason_top1,
        reason_top3: m.reason_top3,
        department_top1: m.department_top1,
        department_top3: m.department_top3,
    };
    let decisions = model_decisions(&clf, &test, &corpus.map, &policy)?;
    let full = model_decisions(&clf, &test, &corpus.map, &RoutingPolicy::always_auto())?;
    let routing = routing_table(&corpus.heuristic()?, &test, &decisions, &full, policy.coverage)?.rows;
    Ok(MetricReport {
        fingerprint: String::new(),
        context: None,
        heads: vec![head],
        feature_sets: Vec::new(),
        routing,
        class_support: clf.model().filter.counts.clone(),
        notes: vec![format!(
            "{} train / {} validation / {} test tickets; {} test rows of dropped classes skipped; threshold {:.4}",
            train.len(),
            validation.len(),
            test.len(),
            m.skipped,
            policy.threshold
        )],
    })
}
