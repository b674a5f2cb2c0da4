//! End-to-end evaluation runs on a generated corpus: classifier heads,
//! text representations, routing strategies and the context gate.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::context::{train_context_model, ContextAnnotation, ContextError, ContextTrainOptions};
use crate::corpus::{
    generate, oracle_embeddings, planted_embeddings, Catalog, CorpusError, CorpusSpec, GeneratedCorpus, Ticket,
    PLANTED_DIMENSION, PLANTED_NOISE,
};
use crate::dialog::DialogMemory;
use crate::evalsim::{
    department_accuracy, out_of_time_split, rank_indices, topk_accuracy, transfer_rate, ContextRow, EvalError,
    FeatureRow, HeadRow, MetricReport, RoutingRow, SplitSpec, TransferStats,
};
use crate::models::{Penalty, TrainConfig};
use crate::reason::{
    train_reason_model, BowSettings, FileProvider, Head, ReasonClassifier, ReasonError, ReasonExample,
    ReasonTrainOptions, TextFeatures,
};
use crate::routing::{
    aggregate, heuristic_route, route, DepartmentMap, HeuristicLookup, RoutingDecision, RoutingError, RoutingPolicy,
    RuleSet, HUMAN_TRIAGE,
};
use crate::tabular::FeatureSchema;
use crate::text::StopWords;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSpec,
    pub split: SplitSpec,
    pub min_count: usize,
    pub train: TrainConfig,
    /// Inverse regularization strength of the logistic-regression head.
    pub lr_c: f64,
    pub mlp_hidden: Vec<usize>,
    pub bow: BowSettings,
    pub coverage: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            corpus: CorpusSpec::default(),
            split: SplitSpec::default(),
            min_count: 50,
            train: TrainConfig { seed: 42, ..TrainConfig::default() },
            lr_c: 1.0,
            mlp_hidden: vec![256],
            bow: BowSettings::default(),
            coverage: 0.8,
        }
    }
}

impl ExperimentConfig {
    /// Short stable hash of the configuration, printed with reports.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().take(6).map(|b| format!("{b:02x}")).collect()
    }

    pub fn lr_head(&self) -> Head {
        Head::Linear { penalty: Penalty::L2, c: self.lr_c }
    }

    pub fn mlp_head(&self) -> Head {
        Head::Mlp { hidden: self.mlp_hidden.clone() }
    }
}

/// A generated corpus cut chronologically into train/validation/test.
pub struct Prepared {
    pub catalog: Catalog,
    pub map: DepartmentMap,
    pub schema: FeatureSchema,
    pub corpus: GeneratedCorpus,
    pub train: Vec<Ticket>,
    pub validation: Vec<Ticket>,
    pub test: Vec<Ticket>,
}

impl Prepared {
    pub fn new(catalog: Catalog, config: &ExperimentConfig) -> Result<Self, ExperimentError> {
        let corpus = generate(&catalog, &config.corpus)?;
        let (train, validation, test) = out_of_time_split(&corpus.tickets, &config.split)?;
        Ok(Prepared {
            map: catalog.department_map(),
            schema: catalog.schema(),
            catalog,
            corpus,
            train,
            validation,
            test,
        })
    }

    pub fn examples(tickets: &[Ticket]) -> Vec<ReasonExample> {
        tickets.iter().map(Ticket::example).collect()
    }
}

/// Top-1/top-3 accuracy for reasons and departments on the rows whose
/// class the model kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonMetrics {
    pub reason_top1: f64,
    pub reason_top3: f64,
    pub department_top1: f64,
    pub department_top3: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

pub fn reason_metrics(
    classifier: &ReasonClassifier,
    tickets: &[Ticket],
    map: &DepartmentMap,
) -> Result<ReasonMetrics, ExperimentError> {
    let filter = &classifier.model().filter;
    let rows: Vec<ReasonExample> = tickets.iter().filter(|t| filter.keeps(&t.reason)).map(Ticket::example).collect();
    let refs: Vec<&ReasonExample> = rows.iter().collect();
    let probs = classifier.predict_all(&refs)?;
    let truths: Vec<usize> = rows.iter().map(|e| filter.index(&e.reason).expect("kept")).collect();
    let ranked: Vec<Vec<usize>> = probs.iter().map(|p| rank_indices(p)).collect();
    let departments: Vec<String> =
        rows.iter().map(|e| map.department_of(&e.reason).unwrap_or_default().to_owned()).collect();
    let classes = classifier.classes();
    Ok(ReasonMetrics {
        reason_top1: topk_accuracy(&ranked, &truths, 1)?,
        reason_top3: topk_accuracy(&ranked, &truths, 3)?,
        department_top1: department_accuracy(&probs, classes, map, &departments, 1)?,
        department_top3: department_accuracy(&probs, classes, map, &departments, 3)?,
        evaluated: rows.len(),
        skipped: tickets.len() - rows.len(),
    })
}

fn train(
    data: &Prepared,
    config: &ExperimentConfig,
    text: TextFeatures,
    tabular: bool,
    head: Head,
) -> Result<ReasonClassifier, ExperimentError> {
    let options = ReasonTrainOptions {
        text,
        schema: tabular.then(|| data.schema.clone()),
        head,
        train: config.train.clone(),
        min_count: config.min_count,
        stopwords: StopWords::portuguese(),
    };
    let t = train_reason_model(&Prepared::examples(&data.train), &Prepared::examples(&data.validation), &options)?;
    Ok(t.classifier)
}

/// The bag-of-words + profile model with the given head.
pub fn train_fusion(
    data: &Prepared,
    config: &ExperimentConfig,
    head: Head,
) -> Result<ReasonClassifier, ExperimentError> {
    train(data, config, TextFeatures::Bow(config.bow.clone()), true, head)
}

/// Logistic regression and perceptron heads on bag-of-words + profile.
pub fn run_heads(
    data: &Prepared,
    config: &ExperimentConfig,
) -> Result<Vec<(HeadRow, ReasonClassifier)>, ExperimentError> {
    let mut out = Vec::new();
    for (name, head) in [("LR", config.lr_head()), ("MLP", config.mlp_head())] {
        let clf = train_fusion(data, config, head)?;
        let m = reason_metrics(&clf, &data.test, &data.map)?;
        log::info!("{name}: reason top-1 {:.4}, department top-1 {:.4}", m.reason_top1, m.department_top1);
        out.push((
            HeadRow {
                model: name.into(),
                reason_top1: m.reason_top1,
                reason_top3: m.reason_top3,
                department_top1: m.department_top1,
                department_top3: m.department_top3,
            },
            clf,
        ));
    }
    Ok(out)
}

pub const FEATURE_BOW: &str = "Bag-of-words";
pub const FEATURE_TABULAR: &str = "Profile only";
pub const FEATURE_FUSION: &str = "Bag-of-words + profile";
pub const FEATURE_PLANTED: &str = "Planted embeddings";
pub const FEATURE_PLANTED_FUSION: &str = "Planted embeddings + profile";
pub const FEATURE_ORACLE: &str = "Oracle embeddings";

/// Text representations compared under the same head.
pub fn run_feature_sets(
    data: &Prepared,
    config: &ExperimentConfig,
    head: &Head,
) -> Result<Vec<FeatureRow>, ExperimentError> {
    let planted = Arc::new(FileProvider::in_memory(planted_embeddings(
        &data.corpus,
        PLANTED_DIMENSION,
        PLANTED_NOISE,
        config.corpus.seed,
    )?));
    let oracle = Arc::new(FileProvider::in_memory(oracle_embeddings(&data.catalog, &data.corpus.tickets)?));
    let bow = || TextFeatures::Bow(config.bow.clone());
    let runs: Vec<(&str, TextFeatures, bool)> = vec![
        (FEATURE_BOW, bow(), false),
        (FEATURE_TABULAR, TextFeatures::None, true),
        (FEATURE_FUSION, bow(), true),
        (FEATURE_PLANTED, TextFeatures::Provider(planted.clone()), false),
        (FEATURE_PLANTED_FUSION, TextFeatures::Provider(planted), true),
        (FEATURE_ORACLE, TextFeatures::Provider(oracle), false),
    ];
    let mut rows = Vec::new();
    for (name, text, tabular) in runs {
        let clf = train(data, config, text, tabular, head.clone())?;
        let m = reason_metrics(&clf, &data.test, &data.map)?;
        log::info!("{name}: reason top-1 {:.4}", m.reason_top1);
        rows.push(FeatureRow { features: name.into(), reason_top1: m.reason_top1 });
    }
    Ok(rows)
}

/// Model routing decisions for a set of tickets under a policy.
pub fn model_decisions(
    classifier: &ReasonClassifier,
    tickets: &[Ticket],
    map: &DepartmentMap,
    policy: &RoutingPolicy,
) -> Result<Vec<RoutingDecision>, ExperimentError> {
    let index = map.class_index(classifier.classes())?;
    let memory = DialogMemory::new("evaluation", "evaluation");
    let rules = RuleSet::default();
    tickets
        .iter()
        .map(|t| {
            let p = classifier.predict(Some(&t.id), &t.message, &t.profile, 3)?;
            let scores = aggregate(&p.probabilities, &index, map)?;
            Ok(route(&scores, p.top, policy, &rules, &memory))
        })
        .collect()
}

/// Best department score of each ticket, the calibration input.
pub fn max_scores(
    classifier: &ReasonClassifier,
    tickets: &[Ticket],
    map: &DepartmentMap,
) -> Result<Vec<f64>, ExperimentError> {
    Ok(model_decisions(classifier, tickets, map, &RoutingPolicy::always_auto())?.iter().map(|d| d.max_score).collect())
}

fn fixed_decision(department: &str) -> RoutingDecision {
    RoutingDecision {
        department: department.to_owned(),
        predicted_department: department.to_owned(),
        auto_routed: true,
        max_score: 1.0,
        threshold: 0.0,
        top_reasons: Vec::new(),
        rule_id: None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingOutcome {
    pub rows: Vec<RoutingRow>,
    pub policy: RoutingPolicy,
    /// Share of validation chats at or above the calibrated threshold.
    pub calibration_coverage: f64,
    pub calibration_size: usize,
    pub heuristic: TransferStats,
    pub model: TransferStats,
    pub model_full: TransferStats,
    pub perfect: TransferStats,
}

pub const ROUTE_HEURISTIC: &str = "Heuristic (last automatic message)";
pub const ROUTE_PERFECT: &str = "Perfect router";

/// Routing strategies on the test split. The model threshold is
/// calibrated on the validation split.
pub fn run_routing(
    data: &Prepared,
    classifier: &ReasonClassifier,
    coverage: f64,
) -> Result<RoutingOutcome, ExperimentError> {
    let val_scores = max_scores(classifier, &data.validation, &data.map)?;
    let policy = RoutingPolicy::calibrate(&val_scores, coverage)?;
    let calibration_coverage =
        val_scores.iter().filter(|&&s| s >= policy.threshold).count() as f64 / val_scores.len() as f64;
    let decisions = model_decisions(classifier, &data.test, &data.map, &policy)?;
    let full = model_decisions(classifier, &data.test, &data.map, &RoutingPolicy::always_auto())?;
    debug_assert!(decisions.iter().all(|d| d.auto_routed || d.department == HUMAN_TRIAGE));
    let t = routing_table(&data.catalog.heuristic_lookup(), &data.test, &decisions, &full, coverage)?;
    Ok(RoutingOutcome {
        rows: t.rows,
        policy,
        calibration_coverage,
        calibration_size: val_scores.len(),
        heuristic: t.heuristic,
        model: t.model,
        model_full: t.model_full,
        perfect: t.perfect,
    })
}

/// Transfer statistics of the four routing strategies on one test set.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingTable {
    pub rows: Vec<RoutingRow>,
    pub heuristic: TransferStats,
    pub model: TransferStats,
    pub model_full: TransferStats,
    pub perfect: TransferStats,
}

/// Compares the heuristic and a perfect router with the model decisions
/// at the calibrated threshold (`decisions`) and at full coverage (`full`).
pub fn routing_table(
    lookup: &HeuristicLookup,
    tickets: &[Ticket],
    decisions: &[RoutingDecision],
    full: &[RoutingDecision],
    coverage: f64,
) -> Result<RoutingTable, ExperimentError> {
    let truths: Vec<String> = tickets.iter().map(|t| t.department.clone()).collect();
    let heuristic: Vec<RoutingDecision> =
        tickets.iter().map(|t| fixed_decision(heuristic_route(&t.profile, lookup))).collect();
    let perfect: Vec<RoutingDecision> = truths.iter().map(|d| fixed_decision(d)).collect();
    let heuristic = transfer_rate(&heuristic, &truths)?;
    let model = transfer_rate(decisions, &truths)?;
    let model_full = transfer_rate(full, &truths)?;
    let perfect = transfer_rate(&perfect, &truths)?;
    let row =
        |name: String, s: &TransferStats| RoutingRow { strategy: name, coverage: s.coverage, transfer_rate: s.rate };
    let rows = vec![
        row(ROUTE_HEURISTIC.into(), &heuristic),
        row(format!("Fusion model ({:.0}% coverage)", 100.0 * coverage), &model),
        row("Fusion model (100% coverage)".into(), &model_full),
        row(ROUTE_PERFECT.into(), &perfect),
    ];
    Ok(RoutingTable { rows, heuristic, model, model_full, perfect })
}

/// Trains and tests the context gate on generated annotations.
pub fn run_context(
    annotations: &[ContextAnnotation],
    options: &ContextTrainOptions,
) -> Result<ContextRow, ExperimentError> {
    let t = train_context_model(annotations, options, &StopWords::portuguese())?;
    let r = t.report;
    Ok(ContextRow {
        train_size: r.train_size,
        test_size: r.test_size,
        positives: r.positives,
        negatives: r.negatives,
        dropped: r.dropped,
        test_accuracy: r.test_accuracy,
    })
}

/// Every table on one corpus.
pub fn run_all(catalog: Catalog, config: &ExperimentConfig) -> Result<(MetricReport, RoutingOutcome), ExperimentError> {
    let data = Prepared::new(catalog, config)?;
    let context = run_context(&data.corpus.annotations, &ContextTrainOptions::default())?;
    let heads = run_heads(&data, config)?;
    let features = run_feature_sets(&data, config, &config.lr_head())?;
    let mlp = &heads.iter().find(|(h, _)| h.model == "MLP").expect("MLP head").1;
    let routing = run_routing(&data, mlp, config.coverage)?;
    let class_support = mlp.model().filter.counts.clone();
    let report = MetricReport {
        fingerprint: config.fingerprint(),
        context: Some(context),
        heads: heads.into_iter().map(|(h, _)| h).collect(),
        feature_sets: features,
        routing: routing.rows.clone(),
        class_support,
        notes: vec![format!(
            "{} train / {} validation / {} test tickets; threshold {:.4} from validation",
            data.train.len(),
            data.validation.len(),
            data.test.len(),
            routing.policy.threshold
        )],
    };
    Ok((report, routing))
}
