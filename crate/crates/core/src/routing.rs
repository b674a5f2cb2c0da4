//! Department routing: reason probabilities are summed per department, the
//! best department is auto-routed only when its score clears a threshold
//! calibrated for a target coverage, and ordered business rules may
//! override the model.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::dialog::DialogMemory;
use crate::tabular::{FeatureValue, TabularRecord};

pub const HUMAN_TRIAGE: &str = "human_triage";

#[derive(Debug, Error, PartialEq)]
pub enum RoutingError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("reason {0:?} has no department")]
    UnmappedReason(String),
    #[error("unknown department {0:?}")]
    UnknownDepartment(String),
    #[error("duplicate department {0:?}")]
    DuplicateDepartment(String),
    #[error("score list is empty")]
    EmptyScores,
    #[error("scores contain a non-finite value")]
    NonFiniteScore,
    #[error("coverage must be in (0, 1], got {0}")]
    InvalidCoverage(f64),
    #[error("probability vector has {found} entries for {expected} classes")]
    LengthMismatch { expected: usize, found: usize },
    #[error("rule {rule:?}: {message}")]
    InvalidRule { rule: String, message: String },
}

/// Reason code → department id. Departments are kept in ascending id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DepartmentMapDoc", into = "DepartmentMapDoc")]
pub struct DepartmentMap {
    departments: Vec<String>,
    names: BTreeMap<String, String>,
    reasons: BTreeMap<String, String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DepartmentMapDoc {
    departments: BTreeMap<String, String>,
    reasons: BTreeMap<String, String>,
}

impl TryFrom<DepartmentMapDoc> for DepartmentMap {
    type Error = RoutingError;

    fn try_from(doc: DepartmentMapDoc) -> Result<Self, Self::Error> {
        let mut map = DepartmentMap::new(doc.departments.keys().map(String::as_str), doc.reasons)?;
        map.names = doc.departments;
        Ok(map)
    }
}

impl From<DepartmentMap> for DepartmentMapDoc {
    fn from(m: DepartmentMap) -> Self {
        let departments =
            m.departments.iter().map(|d| (d.clone(), m.names.get(d).cloned().unwrap_or_default())).collect();
        DepartmentMapDoc { departments, reasons: m.reasons }
    }
}

impl DepartmentMap {
    pub fn new<'a>(
        departments: impl IntoIterator<Item = &'a str>,
        reasons: BTreeMap<String, String>,
    ) -> Result<Self, RoutingError> {
        let mut seen = BTreeSet::new();
        for d in departments {
            if !seen.insert(d.to_owned()) {
                return Err(RoutingError::DuplicateDepartment(d.to_owned()));
            }
        }
        if let Some(d) = reasons.values().find(|d| !seen.contains(*d)) {
            return Err(RoutingError::UnknownDepartment(d.clone()));
        }
        Ok(DepartmentMap { departments: seen.into_iter().collect(), names: BTreeMap::new(), reasons })
    }

    pub fn with_names(mut self, names: BTreeMap<String, String>) -> Self {
        self.names = names;
        self
    }

    pub fn from_toml(doc: &str) -> Result<Self, RoutingError> {
        toml::from_str(doc).map_err(|e| RoutingError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("department map serializes")
    }

    pub fn departments(&self) -> &[String] {
        &self.departments
    }

    pub fn display_name<'a>(&'a self, department: &'a str) -> &'a str {
        self.names.get(department).map_or(department, String::as_str)
    }

    pub fn department_of(&self, reason: &str) -> Option<&str> {
        self.reasons.get(reason).map(String::as_str)
    }

    pub fn department_index(&self, department: &str) -> Option<usize> {
        self.departments.binary_search_by(|d| d.as_str().cmp(department)).ok()
    }

    pub fn reasons(&self) -> impl Iterator<Item = (&str, &str)> {
        self.reasons.iter().map(|(r, d)| (r.as_str(), d.as_str()))
    }

    /// For each class, the index of its department. Fails on the first
    /// unmapped class.
    pub fn class_index(&self, classes: &[String]) -> Result<Vec<usize>, RoutingError> {
        classes
            .iter()
            .map(|c| {
                self.department_of(c)
                    .and_then(|d| self.department_index(d))
                    .ok_or_else(|| RoutingError::UnmappedReason(c.clone()))
            })
            .collect()
    }
}

/// Per-department scores aligned with [`DepartmentMap::departments`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DepartmentScores {
    pub departments: Vec<String>,
    pub scores: Vec<f64>,
}

impl DepartmentScores {
    /// Best department; ties go to the smallest department id.
    pub fn best(&self) -> (usize, f64) {
        let mut best = 0;
        for (i, s) in self.scores.iter().enumerate() {
            if *s > self.scores[best] {
                best = i;
            }
        }
        (best, self.scores[best])
    }

    pub fn best_department(&self) -> &str {
        &self.departments[self.best().0]
    }

    pub fn max_score(&self) -> f64 {
        self.best().1
    }

    pub fn get(&self, department: &str) -> Option<f64> {
        self.departments.iter().position(|d| d == department).map(|i| self.scores[i])
    }

    pub fn to_map(&self) -> BTreeMap<String, f64> {
        self.departments.iter().cloned().zip(self.scores.iter().copied()).collect()
    }

    /// Departments ranked by score, ties by id.
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.scores.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx
    }
}

/// Sums `probabilities` (aligned with `classes`) per department.
pub fn department_scores(
    probabilities: &[f64],
    classes: &[String],
    map: &DepartmentMap,
) -> Result<DepartmentScores, RoutingError> {
    let index = map.class_index(classes)?;
    aggregate(probabilities, &index, map)
}

/// As [`department_scores`] with a precomputed [`DepartmentMap::class_index`].
pub fn aggregate(
    probabilities: &[f64],
    index: &[usize],
    map: &DepartmentMap,
) -> Result<DepartmentScores, RoutingError> {
    if probabilities.len() != index.len() {
        return Err(RoutingError::LengthMismatch { expected: index.len(), found: probabilities.len() });
    }
    let mut scores = vec![0.0; map.departments.len()];
    for (p, &d) in probabilities.iter().zip(index) {
        scores[d] += p;
    }
    Ok(DepartmentScores { departments: map.departments.clone(), scores })
}

/// The ⌈ρ·N⌉-th largest score: the largest τ such that at least a fraction
/// ρ of `scores` are ≥ τ.
pub fn calibrate_threshold(scores: &[f64], coverage: f64) -> Result<f64, RoutingError> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(RoutingError::InvalidCoverage(coverage));
    }
    if scores.is_empty() {
        return Err(RoutingError::EmptyScores);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(RoutingError::NonFiniteScore);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let n = sorted.len();
    // guard against ρ·N landing a hair above an integer
    let k = ((coverage * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[k - 1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingPolicy {
    pub coverage: f64,
    pub threshold: f64,
    #[serde(default = "default_fallback")]
    pub fallback: String,
}

fn default_fallback() -> String {
    HUMAN_TRIAGE.to_owned()
}

impl RoutingPolicy {
    /// Calibrates τ on validation max-scores.
    pub fn calibrate(validation_max_scores: &[f64], coverage: f64) -> Result<Self, RoutingError> {
        Ok(RoutingPolicy {
            coverage,
            threshold: calibrate_threshold(validation_max_scores, coverage)?,
            fallback: default_fallback(),
        })
    }

    /// Routes everything (τ = −∞ behaves as "always auto").
    pub fn always_auto() -> Self {
        RoutingPolicy { coverage: 1.0, threshold: f64::NEG_INFINITY, fallback: default_fallback() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparison {
    fn holds(self, a: f64, b: f64) -> bool {
        match self {
            Comparison::Lt => a < b,
            Comparison::Le => a <= b,
            Comparison::Gt => a > b,
            Comparison::Ge => a >= b,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Condition {
    /// Slot (dotted path into the dialog memory) equals a value.
    Equals {
        slot: String,
        value: Value,
    },
    InSet {
        slot: String,
        values: Vec<Value>,
    },
    /// Compares a department's score, or the best score when
    /// `department = "max"`.
    Score {
        department: String,
        op: Comparison,
        value: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    Route(String),
    HumanTriage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rule {
    pub id: String,
    pub when: Condition,
    pub action: RuleAction,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default)]
    pub rules: Vec<Rule>,
}

fn values_equal(a: &Value, b: &Value) -> bool {
    match (a.as_f64(), b.as_f64()) {
        (Some(x), Some(y)) => x == y,
        _ => a == b,
    }
}

impl RuleSet {
    pub fn from_toml(doc: &str) -> Result<Self, RoutingError> {
        toml::from_str(doc).map_err(|e| RoutingError::Parse(e.to_string()))
    }

    /// Checks that rule ids are unique, departments exist and slot paths
    /// start with a declared slot.
    pub fn validate(&self, map: &DepartmentMap, declared_slots: &[&str]) -> Result<(), RoutingError> {
        let mut ids = BTreeSet::new();
        for r in &self.rules {
            let bad = |message: String| RoutingError::InvalidRule { rule: r.id.clone(), message };
            if !ids.insert(r.id.as_str()) {
                return Err(bad("duplicate rule id".into()));
            }
            if let RuleAction::Route(d) = &r.action {
                if map.department_index(d).is_none() {
                    return Err(bad(format!("unknown department {d:?}")));
                }
            }
            match &r.when {
                Condition::Equals { slot, .. } | Condition::InSet { slot, .. } => {
                    let root = slot.split('.').next().unwrap_or_default();
                    if !declared_slots.contains(&root) {
                        return Err(bad(format!("undeclared slot {slot:?}")));
                    }
                }
                Condition::Score { department, .. } => {
                    if department != "max" && map.department_index(department).is_none() {
                        return Err(bad(format!("unknown department {department:?}")));
                    }
                }
            }
        }
        Ok(())
    }

    /// First rule whose condition holds.
    pub fn first_match(&self, scores: &DepartmentScores, memory: &DialogMemory) -> Option<&Rule> {
        self.rules.iter().find(|r| match &r.when {
            Condition::Equals { slot, value } => memory.lookup(slot).is_some_and(|v| values_equal(v, value)),
            Condition::InSet { slot, values } => {
                memory.lookup(slot).is_some_and(|v| values.iter().any(|x| values_equal(v, x)))
            }
            Condition::Score { department, op, value } => {
                let s = if department == "max" { Some(scores.max_score()) } else { scores.get(department) };
                s.is_some_and(|s| op.holds(s, *value))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReasonScore {
    pub reason: String,
    pub probability: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    /// Destination queue: a department, or the policy fallback when the
    /// chat goes to human triage.
    pub department: String,
    /// Highest-scoring department, whatever the destination.
    pub predicted_department: String,
    pub auto_routed: bool,
    pub max_score: f64,
    pub threshold: f64,
    pub top_reasons: Vec<ReasonScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_id: Option<String>,
}

/// Rules first (first match wins), then argmax department, auto-routed
/// only if its score reaches the policy threshold.
pub fn route(
    scores: &DepartmentScores,
    top_reasons: Vec<ReasonScore>,
    policy: &RoutingPolicy,
    rules: &RuleSet,
    memory: &DialogMemory,
) -> RoutingDecision {
    let (best, max_score) = scores.best();
    let predicted = scores.departments[best].clone();
    let mut decision = RoutingDecision {
        department: predicted.clone(),
        predicted_department: predicted,
        auto_routed: true,
        max_score,
        threshold: policy.threshold,
        top_reasons,
        rule_id: None,
    };
    if let Some(rule) = rules.first_match(scores, memory) {
        decision.rule_id = Some(rule.id.clone());
        match &rule.action {
            RuleAction::Route(d) => decision.department = d.clone(),
            RuleAction::HumanTriage => {
                decision.department = policy.fallback.clone();
                decision.auto_routed = false;
            }
        }
        return decision;
    }
    if max_score < policy.threshold {
        decision.department = policy.fallback.clone();
        decision.auto_routed = false;
    }
    decision
}

/// The baseline: route on the type of the last automatic message the user
/// received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicLookup {
    #[serde(default = "default_heuristic_feature")]
    pub feature: String,
    pub default: String,
    pub lookup: BTreeMap<String, String>,
}

fn default_heuristic_feature() -> String {
    "last_auto_msg_type".to_owned()
}

impl HeuristicLookup {
    pub fn from_toml(doc: &str) -> Result<Self, RoutingError> {
        toml::from_str(doc).map_err(|e| RoutingError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("lookup serializes")
    }

    pub fn validate(&self, map: &DepartmentMap) -> Result<(), RoutingError> {
        std::iter::once(&self.default)
            .chain(self.lookup.values())
            .find(|d| map.department_index(d).is_none())
            .map_or(Ok(()), |d| Err(RoutingError::UnknownDepartment(d.clone())))
    }
}

pub fn heuristic_route<'a>(record: &TabularRecord, lookup: &'a HeuristicLookup) -> &'a str {
    match record.get(&lookup.feature) {
        Some(FeatureValue::Category(t)) => lookup.lookup.get(t).unwrap_or(&lookup.default),
        _ => &lookup.default,
    }
}
