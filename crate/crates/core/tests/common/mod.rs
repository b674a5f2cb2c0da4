#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde_json::{json, Value};
use triage::context::ContextTrainOptions;
use triage::corpus::{write_corpus, Catalog, CorpusSpec};
use triage::dialog::{
    load_flow, Engine, HandlerContext, HandlerError, HandlerRegistry, HandlerResult, Outbound, TemplateStore,
};
use triage::evalsim::SplitSpec;
use triage::features::FeatureVector;
use triage::pipeline::{Triage, DEFAULT_FLOW, DEFAULT_TEMPLATES, ROUTING_DIRECTIVE};
use triage::workflow::{self, CorpusDir, ReasonStage};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn blessing() -> bool {
    std::env::var_os("TRIAGE_BLESS").is_some()
}

/// The committed Gaussian-blobs fixture as (features, labels, is_train).
pub fn blobs() -> (Vec<FeatureVector>, Vec<usize>, Vec<bool>) {
    let mut r = csv::Reader::from_path(manifest_dir().join("tests/fixtures/blobs.csv")).unwrap();
    let (mut x, mut y, mut train) = (Vec::new(), Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec.unwrap();
        x.push(FeatureVector::from_dense(&[rec[0].parse().unwrap(), rec[1].parse().unwrap()]));
        y.push(rec[2].parse().unwrap());
        train.push(&rec[3] == "train");
    }
    (x, y, train)
}

pub struct Trained {
    pub root: tempfile::TempDir,
    pub corpus: PathBuf,
    pub models: PathBuf,
}

/// Seed-42 corpus with context gate, MLP reason model and an 80%
/// coverage policy, built once per test binary.
pub fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let corpus = root.path().join("corpus");
        let models = root.path().join("models");
        write_corpus(&Catalog::builtin(), &CorpusSpec::default(), &corpus).unwrap();
        let dir = CorpusDir::open(&corpus).unwrap();
        workflow::train_context(&dir, &models, &ContextTrainOptions::default()).unwrap();
        workflow::train_reason(&dir, &models, &ReasonStage::default()).unwrap();
        workflow::calibrate(&dir, &models, 0.8, &SplitSpec::default()).unwrap();
        Trained { root, corpus, models }
    })
}

pub fn trained_engine() -> Engine {
    Triage::load(&trained().models, None).unwrap().engine(0).unwrap()
}

/// The default flow with model-free stand-ins: the gate accepts messages
/// of three or more words, prediction is fixed, routing always emits a
/// decision.
pub fn stub_engine() -> Engine {
    let mut r = HandlerRegistry::with_builtins();
    r.register("context_gate", |ctx: &HandlerContext<'_>| -> Result<HandlerResult, HandlerError> {
        let text = ctx.user_text().ok_or_else(|| HandlerError::new("expected user_message"))?;
        let attempts = ctx.memory.slot("context_attempts").and_then(Value::as_u64).unwrap_or(0);
        let out = HandlerResult::decision("sufficient").write("description", text);
        if text.split_whitespace().count() >= 3 {
            return Ok(out);
        }
        let mut out = out.write("context_attempts", attempts + 1);
        out.decision_key = if attempts + 1 >= 3 { "exhausted".into() } else { "insufficient".into() };
        Ok(out)
    });
    r.register("predict_reason", |_: &HandlerContext<'_>| -> Result<HandlerResult, HandlerError> {
        Ok(HandlerResult::decision("predicted"))
    });
    r.register("route", |_: &HandlerContext<'_>| -> Result<HandlerResult, HandlerError> {
        let payload = json!({
            "department": "tenants", "department_name": "Inquilinos", "predicted_department": "tenants",
            "auto_routed": true, "max_score": 0.9, "threshold": 0.5,
            "top_reasons": [{"reason": "iq_pg_boleto", "probability": 0.9}],
        });
        Ok(HandlerResult::decision("routed")
            .say(Outbound::Say {
                template: "routed_auto".into(),
                substitutions: [("department_name".to_owned(), "Inquilinos".to_owned())].into(),
            })
            .say(Outbound::Directive { kind: ROUTING_DIRECTIVE.into(), payload }))
    });
    let flow = load_flow(DEFAULT_FLOW, &r).unwrap();
    Engine::new(flow, TemplateStore::from_toml(DEFAULT_TEMPLATES).unwrap(), r).unwrap()
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
