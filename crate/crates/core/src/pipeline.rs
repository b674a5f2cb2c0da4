//! The triage handlers (context gate, reason prediction, routing) and the
//! bundle of trained models and configuration that wires them into a
//! dialog [`Engine`].

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::context::{evaluate_context, ContextError, ContextModel};
use crate::corpus::DEPARTMENTS_FILE;
use crate::dialog::{
    load_flow, DialogError, Engine, Handler, HandlerContext, HandlerError, HandlerRegistry, HandlerResult, Outbound,
    TemplateStore,
};
use crate::reason::{ReasonClassifier, ReasonError};
use crate::routing::{
    aggregate, route, DepartmentMap, DepartmentScores, ReasonScore, RoutingDecision, RoutingError, RoutingPolicy,
    RuleSet,
};
use crate::tabular::TabularRecord;

pub const DEFAULT_FLOW: &str = include_str!("../config/flow.toml");
pub const DEFAULT_TEMPLATES: &str = include_str!("../config/templates.toml");
pub const DEFAULT_RULES: &str = include_str!("../config/rules.toml");

pub const CONTEXT_MODEL_FILE: &str = "context.model";
pub const REASON_MODEL_FILE: &str = "reason.model";
pub const POLICY_FILE: &str = "policy.json";
pub const FLOW_FILE: &str = "flow.toml";
pub const TEMPLATES_FILE: &str = "templates.toml";
pub const RULES_FILE: &str = "rules.toml";

/// Display name of the fallback queue unless the department map names it.
pub const HUMAN_TRIAGE_NAME: &str = "Triagem humana";

/// Directive kind carrying the final [`RoutingDecision`].
pub const ROUTING_DIRECTIVE: &str = "routing_decision";

/// Slots written by the default flow; routing rules may only test these.
pub const FLOW_SLOTS: [&str; 10] = [
    "profile",
    "ticket_id",
    "description",
    "context_attempts",
    "context_exhausted",
    "customer_name",
    "pending_slot",
    "prediction",
    "prediction_error",
    "routing",
];

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Reason(#[from] ReasonError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Dialog(#[from] DialogError),
}

/// Gates the first description. Appends the message to `description`;
/// decision `sufficient` if the message states a problem, otherwise
/// `insufficient` until `params.max_attempts` (default 3) vague messages,
/// then `exhausted` with `context_exhausted = true`.
pub struct ContextGate {
    model: Arc<ContextModel>,
}

impl ContextGate {
    pub fn new(model: Arc<ContextModel>) -> Self {
        ContextGate { model }
    }
}

impl Handler for ContextGate {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let text = ctx.user_text().ok_or_else(|| HandlerError::new("expected user_message"))?.trim();
        let description = match ctx.memory.slot("description").and_then(Value::as_str) {
            Some(prev) if !prev.is_empty() && !text.is_empty() => format!("{prev} {text}"),
            Some(prev) if text.is_empty() => prev.to_owned(),
            _ => text.to_owned(),
        };
        let verdict = evaluate_context(&self.model, text);
        let out = HandlerResult::decision("sufficient").write("description", description);
        if verdict.has_context {
            return Ok(out);
        }
        let max = ctx.param_u64("max_attempts").unwrap_or(3);
        let attempts = ctx.memory.slot("context_attempts").and_then(Value::as_u64).unwrap_or(0) + 1;
        let mut out = out.write("context_attempts", attempts);
        if attempts >= max {
            out.decision_key = "exhausted".into();
            Ok(out.write("context_exhausted", true))
        } else {
            out.decision_key = "insufficient".into();
            Ok(out)
        }
    }
}

/// The value stored in the `prediction` slot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionSlot {
    pub top_reasons: Vec<ReasonScore>,
    pub department_scores: Vec<(String, f64)>,
}

/// Predicts the contact reason from `description` and `profile`. Writes
/// `prediction` (decision `predicted`), or `prediction_error` when the
/// text provider fails (decision `failed`). Top `params.k` reasons, default 3.
pub struct PredictReason {
    classifier: Arc<ReasonClassifier>,
    map: Arc<DepartmentMap>,
    index: Vec<usize>,
}

impl PredictReason {
    pub fn new(classifier: Arc<ReasonClassifier>, map: Arc<DepartmentMap>) -> Result<Self, RoutingError> {
        let index = map.class_index(classifier.classes())?;
        Ok(PredictReason { classifier, map, index })
    }

    pub fn predict(
        &self,
        id: Option<&str>,
        text: &str,
        profile: &TabularRecord,
        k: usize,
    ) -> Result<PredictionSlot, ReasonError> {
        let k = k.clamp(1, self.classifier.classes().len());
        let p = self.classifier.predict(id, text, profile, k)?;
        let scores = aggregate(&p.probabilities, &self.index, &self.map).expect("index built from this map");
        Ok(PredictionSlot {
            top_reasons: p.top,
            department_scores: scores.departments.into_iter().zip(scores.scores).collect(),
        })
    }
}

impl Handler for PredictReason {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let text = ctx.memory.slot("description").and_then(Value::as_str).unwrap_or_default();
        let profile = match ctx.memory.slot("profile") {
            None | Some(Value::Null) => TabularRecord::new(),
            Some(v) => TabularRecord::from_json(v).ok_or_else(|| HandlerError::new("profile must be a flat object"))?,
        };
        let id = ctx.memory.slot("ticket_id").and_then(Value::as_str);
        let k = ctx.param_u64("k").unwrap_or(3) as usize;
        match self.predict(id, text, &profile, k) {
            Ok(p) => {
                let value = serde_json::to_value(&p).map_err(|e| HandlerError::new(e.to_string()))?;
                Ok(HandlerResult::decision("predicted").write("prediction", value))
            }
            Err(e) => {
                log::warn!("session {}: reason prediction failed: {e}", ctx.memory.session_id);
                Ok(HandlerResult::decision("failed").write("prediction_error", e.to_string()))
            }
        }
    }
}

/// Applies rules and the threshold to the stored prediction, writes
/// `routing`, says `routed_auto` or `routed_human` and emits the
/// decision as a [`ROUTING_DIRECTIVE`]. Decision `routed`.
pub struct Route {
    map: Arc<DepartmentMap>,
    policy: RoutingPolicy,
    rules: RuleSet,
}

impl Route {
    pub fn new(map: Arc<DepartmentMap>, policy: RoutingPolicy, rules: RuleSet) -> Self {
        Route { map, policy, rules }
    }

    fn decide(&self, ctx: &HandlerContext<'_>) -> Result<RoutingDecision, HandlerError> {
        let Some(slot) = ctx.memory.slot("prediction") else {
            return Ok(RoutingDecision {
                department: self.policy.fallback.clone(),
                predicted_department: String::new(),
                auto_routed: false,
                max_score: 0.0,
                threshold: self.policy.threshold,
                top_reasons: Vec::new(),
                rule_id: Some("prediction_failed".into()),
            });
        };
        let p: PredictionSlot =
            serde_json::from_value(slot.clone()).map_err(|e| HandlerError::new(format!("bad prediction slot: {e}")))?;
        let mut scores = DepartmentScores { departments: Vec::new(), scores: Vec::new() };
        for d in self.map.departments() {
            let s = p.department_scores.iter().find(|(x, _)| x == d).map_or(0.0, |(_, s)| *s);
            scores.departments.push(d.clone());
            scores.scores.push(s);
        }
        Ok(route(&scores, p.top_reasons, &self.policy, &self.rules, ctx.memory))
    }
}

impl Handler for Route {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let decision = self.decide(ctx)?;
        let mut name = self.map.display_name(&decision.department).to_owned();
        if decision.department == self.policy.fallback && name == decision.department {
            name = HUMAN_TRIAGE_NAME.to_owned();
        }
        let mut payload = serde_json::to_value(&decision).map_err(|e| HandlerError::new(e.to_string()))?;
        payload["department_name"] = json!(name);
        let template = if decision.auto_routed { "routed_auto" } else { "routed_human" };
        Ok(HandlerResult::decision("routed")
            .write("routing", payload.clone())
            .say(Outbound::Say { template: template.into(), substitutions: [("department_name".into(), name)].into() })
            .say(Outbound::Directive { kind: ROUTING_DIRECTIVE.into(), payload }))
    }
}

/// Trained models plus the dialog configuration.
#[derive(Clone, Debug)]
pub struct Triage {
    pub context: Arc<ContextModel>,
    pub reason: Arc<ReasonClassifier>,
    pub map: Arc<DepartmentMap>,
    pub policy: RoutingPolicy,
    pub rules: RuleSet,
    pub flow: String,
    pub templates: TemplateStore,
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|source| PipelineError::Read { path: path.to_owned(), source })
}

fn invalid(path: &Path, message: impl ToString) -> PipelineError {
    PipelineError::Invalid { path: path.to_owned(), message: message.to_string() }
}

impl Triage {
    /// Uses the bundled flow, templates and rules.
    pub fn new(
        context: ContextModel,
        reason: ReasonClassifier,
        map: DepartmentMap,
        policy: RoutingPolicy,
    ) -> Result<Self, PipelineError> {
        Ok(Triage {
            context: Arc::new(context),
            reason: Arc::new(reason),
            map: Arc::new(map),
            policy,
            rules: RuleSet::from_toml(DEFAULT_RULES)?,
            flow: DEFAULT_FLOW.to_owned(),
            templates: TemplateStore::from_toml(DEFAULT_TEMPLATES)?,
        })
    }

    /// Loads `context.model`, `reason.model`, `policy.json` and
    /// `departments.toml` from `model_dir`. `flow.toml`, `templates.toml`
    /// and `rules.toml` are taken from `config_dir` when present there,
    /// otherwise the bundled defaults are used.
    pub fn load(model_dir: &Path, config_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let context = ContextModel::load(&model_dir.join(CONTEXT_MODEL_FILE))?;
        let reason = ReasonClassifier::load(&model_dir.join(REASON_MODEL_FILE))?;
        let dept_path = model_dir.join(DEPARTMENTS_FILE);
        let map = DepartmentMap::from_toml(&read(&dept_path)?).map_err(|e| invalid(&dept_path, e))?;
        let policy_path = model_dir.join(POLICY_FILE);
        let policy: RoutingPolicy = serde_json::from_str(&read(&policy_path)?).map_err(|e| invalid(&policy_path, e))?;
        let mut triage = Triage::new(context, reason, map, policy)?;
        if let Some(dir) = config_dir {
            let p = dir.join(FLOW_FILE);
            if p.exists() {
                triage.flow = read(&p)?;
            }
            let p = dir.join(TEMPLATES_FILE);
            if p.exists() {
                triage.templates = TemplateStore::from_toml(&read(&p)?).map_err(|e| invalid(&p, e))?;
            }
            let p = dir.join(RULES_FILE);
            if p.exists() {
                triage.rules = RuleSet::from_toml(&read(&p)?).map_err(|e| invalid(&p, e))?;
            }
        }
        triage.rules.validate(&triage.map, &FLOW_SLOTS)?;
        Ok(triage)
    }

    /// Writes the routing policy to `model_dir`.
    pub fn save_policy(policy: &RoutingPolicy, model_dir: &Path) -> std::io::Result<()> {
        let mut body = serde_json::to_string_pretty(policy).expect("policy serializes");
        body.push('\n');
        fs::write(model_dir.join(POLICY_FILE), body)
    }

    /// Built-in handlers plus `context_gate`, `predict_reason` and `route`.
    pub fn registry(&self) -> Result<HandlerRegistry, PipelineError> {
        let mut r = HandlerRegistry::with_builtins();
        r.register("context_gate", ContextGate::new(self.context.clone()));
        r.register("predict_reason", PredictReason::new(self.reason.clone(), self.map.clone())?);
        r.register("route", Route::new(self.map.clone(), self.policy.clone(), self.rules.clone()));
        Ok(r)
    }

    pub fn engine(&self, seed: u64) -> Result<Engine, PipelineError> {
        let registry = self.registry()?;
        let flow = load_flow(&self.flow, &registry)?;
        for w in flow.warnings() {
            log::warn!("flow: {w}");
        }
        Ok(Engine::new(flow, self.templates.clone(), registry)?.with_seed(seed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dialog::{DialogMemory, FlowDefinition};

    #[test]
    fn bundled_config_parses() {
        let mut r = HandlerRegistry::with_builtins();
        for name in ["context_gate", "predict_reason", "route"] {
            r.register(name, crate::dialog::Emit);
        }
        let flow: FlowDefinition = load_flow(DEFAULT_FLOW, &r).unwrap();
        assert!(flow.states.len() >= 5);
        assert!(flow.warnings().is_empty(), "{:?}", flow.warnings());
        let templates = TemplateStore::from_toml(DEFAULT_TEMPLATES).unwrap();
        assert!(flow.template_ids().all(|t| templates.contains(t)));
        for t in ["ask_customer_name", "routed_auto", "routed_human"] {
            assert!(templates.contains(t), "{t}");
        }
        let rules = RuleSet::from_toml(DEFAULT_RULES).unwrap();
        let map = crate::corpus::Catalog::builtin().department_map();
        rules.validate(&map, &FLOW_SLOTS).unwrap();
    }

    fn route_with(
        prediction: Option<Value>,
        policy: RoutingPolicy,
        exhausted: bool,
    ) -> (RoutingDecision, Vec<Outbound>) {
        let map = Arc::new(crate::corpus::Catalog::builtin().department_map());
        let r = Route::new(map, policy, RuleSet::from_toml(DEFAULT_RULES).unwrap());
        let mut mem = DialogMemory::new("s", "route");
        if let Some(p) = prediction {
            mem.slots.insert("prediction".into(), p);
        }
        if exhausted {
            mem.slots.insert("context_exhausted".into(), json!(true));
        }
        let params = json!({});
        let ctx = HandlerContext { memory: &mem, event: None, state: "route", params: &params };
        let out = r.handle(&ctx).unwrap();
        let d = serde_json::from_value(out.slot_writes["routing"].clone()).unwrap();
        (d, out.outbound)
    }

    fn slot(scores: &[(&str, f64)]) -> Value {
        json!({
            "top_reasons": [{"reason": "x", "probability": 0.5}],
            "department_scores": scores,
        })
    }

    #[test]
    fn route_handler_threshold_rules_and_failure() {
        let policy = RoutingPolicy { coverage: 0.8, threshold: 0.6, fallback: "human_triage".into() };
        let (d, out) = route_with(Some(slot(&[("owners", 0.7), ("tenants", 0.3)])), policy.clone(), false);
        assert!(d.auto_routed);
        assert_eq!(d.department, "owners");
        assert!(matches!(&out[0], Outbound::Say { template, .. } if template == "routed_auto"));
        assert!(matches!(&out[1], Outbound::Directive { kind, .. } if kind == ROUTING_DIRECTIVE));

        let (d, _) = route_with(Some(slot(&[("owners", 0.5), ("tenants", 0.5)])), policy.clone(), false);
        assert!(!d.auto_routed);
        assert_eq!(d.department, "human_triage");
        assert_eq!(d.predicted_department, "owners");
        assert_eq!(d.top_reasons.len(), 1);

        let (d, _) = route_with(Some(slot(&[("owners", 0.9)])), policy.clone(), true);
        assert_eq!(d.rule_id.as_deref(), Some("context_exhausted"));
        assert!(!d.auto_routed);

        let (d, out) = route_with(None, policy, false);
        assert_eq!(d.rule_id.as_deref(), Some("prediction_failed"));
        assert!(matches!(&out[0], Outbound::Say { template, .. } if template == "routed_human"));
    }
}
