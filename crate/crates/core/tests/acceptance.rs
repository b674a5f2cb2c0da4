//! One PASS/FAIL line per acceptance criterion. Lines go straight to
//! stdout so they show up without `--nocapture`.

#![allow(clippy::duplicate_mod)]

mod common;
#[path = "gradients.rs"]
mod gradients;
#[path = "invariants.rs"]
mod invariants;
#[path = "oracles.rs"]
mod oracles;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use triage::context::ContextTrainOptions;
use triage::corpus::Catalog;
use triage::evalsim::reference::{
    DATASET_CHATS, MIN_CLASS_COUNT, REASONS_AFTER_FILTER, REASONS_BEFORE_FILTER, TEST_CHATS, TRAIN_CHATS,
    VALIDATION_CHATS,
};
use triage::evalsim::{out_of_time_split, SplitSpec};
use triage::experiment::{
    run_context, run_feature_sets, run_heads, run_routing, ExperimentConfig, Prepared, FEATURE_BOW, FEATURE_FUSION,
    FEATURE_ORACLE,
};
use triage::reason::filter_classes;

const SUITE_BUDGET: Duration = Duration::from_secs(60);
const TABLE3_BUDGET: Duration = Duration::from_secs(300);
const FUSION_GAIN: f64 = 0.05;
const ORACLE_FLOOR: f64 = 0.99;
const HEAD_SLACK: f64 = 0.01;
const CONTEXT_FLOOR: f64 = 0.85;

type Checks = Vec<(&'static str, fn())>;

struct Summary {
    failed: Vec<String>,
}

impl Summary {
    fn line(&mut self, name: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let mut out = std::io::stdout().lock();
        let _ = writeln!(out, "{tag} {name}: {detail}");
        let _ = out.flush();
        if !pass {
            self.failed.push(name.to_owned());
        }
    }
}

/// Runs test bodies, collecting the ones that panic.
fn run_suites(suites: &[Checks]) -> (Vec<&'static str>, Duration) {
    let started = Instant::now();
    let mut failures = Vec::new();
    for (name, f) in suites.iter().flatten() {
        if catch_unwind(AssertUnwindSafe(f)).is_err() {
            failures.push(*name);
        }
    }
    (failures, started.elapsed())
}

fn suite_line(s: &mut Summary, name: &str, suites: &[Checks]) {
    let (failures, took) = run_suites(suites);
    let n: usize = suites.iter().map(Vec::len).sum();
    s.line(
        name,
        failures.is_empty() && took < SUITE_BUDGET,
        format!(
            "{}/{n} checks hold in {} ms (budget {}s){}",
            n - failures.len(),
            took.as_millis(),
            SUITE_BUDGET.as_secs(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    );
}

fn golden(s: &mut Summary) {
    let dir = common::manifest_dir().join("tests/golden");
    let input = common::read(&dir.join("session.in.jsonl"));
    let expected = common::read(&dir.join("session.out.jsonl"));
    let mut child = Command::new(env!("CARGO_BIN_EXE_triage"))
        .args(["serve", "--stdio", "--deterministic", "--models"])
        .arg(&common::trained().models)
        .env_remove("TRIAGE_CONFIG_DIR")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    let out = child.wait_with_output().unwrap();
    let actual = String::from_utf8_lossy(&out.stdout);
    let sequence = ["\"greeting\"", "\"ask_context\"", "\"ask_customer_name\"", "\"routing_decision\""];
    let mut rest = actual.as_ref();
    let ordered = sequence.iter().all(|needle| match rest.find(needle) {
        Some(i) => {
            rest = &rest[i..];
            true
        }
        None => false,
    });
    s.line(
        "golden transcript",
        out.status.success() && actual == expected && ordered,
        format!(
            "{} lines, byte-identical: {}, greeting -> ask_context -> routing_decision: {ordered}",
            actual.lines().count(),
            actual == expected
        ),
    );
}

fn dataset_mechanics(s: &mut Summary) {
    let spec = SplitSpec::default();
    let counts = spec.sizes(DATASET_CHATS) == (TRAIN_CHATS, VALIDATION_CHATS, TEST_CHATS);

    // ties on the boundary timestamps must not straddle two splits unordered
    #[derive(Clone)]
    struct Item(i64, String);
    impl triage::evalsim::Timestamped for Item {
        fn timestamp(&self) -> Option<i64> {
            Some(self.0)
        }
        fn tie_key(&self) -> &str {
            &self.1
        }
    }
    let items: Vec<Item> = (0..1000).map(|i| Item((i * 7919) % 97, format!("{i:04}"))).collect();
    let (a, b, c) = out_of_time_split(&items, &spec).unwrap();
    let max = |v: &[Item]| v.iter().map(|i| i.0).max().unwrap();
    let min = |v: &[Item]| v.iter().map(|i| i.0).min().unwrap();
    let boundary = (a.len(), b.len(), c.len()) == (800, 100, 100) && max(&a) <= min(&b) && max(&b) <= min(&c);

    let mut labels = vec!["exactly"; MIN_CLASS_COUNT];
    labels.extend(vec!["short"; MIN_CLASS_COUNT - 1]);
    labels.extend(vec!["plenty"; 3 * MIN_CLASS_COUNT]);
    let f = filter_classes(labels.iter().copied(), MIN_CLASS_COUNT).unwrap();
    let filter = f.kept == ["exactly", "plenty"] && f.dropped == ["short"];
    let reasons = REASONS_AFTER_FILTER < REASONS_BEFORE_FILTER;

    s.line(
        "dataset mechanics",
        counts && boundary && filter && reasons,
        format!("0.8/0.1/0.1 of {DATASET_CHATS} = {:?}: {counts}; boundary ordering: {boundary}; \
                 class with exactly {MIN_CLASS_COUNT} kept: {filter}; {REASONS_BEFORE_FILTER} -> {REASONS_AFTER_FILTER} reasons: {reasons}",
            spec.sizes(DATASET_CHATS)),
    );
}

fn tables(s: &mut Summary) {
    let config = ExperimentConfig::default();
    assert_eq!((config.corpus.seed, config.corpus.size, config.corpus.ambiguity_rate), (42, 5000, 0.3));
    let data = Prepared::new(Catalog::builtin(), &config).unwrap();

    let context = run_context(&data.corpus.annotations, &ContextTrainOptions::default()).unwrap();
    s.line(
        "context gate",
        context.test_accuracy >= CONTEXT_FLOOR,
        format!("test accuracy {:.4} (floor {CONTEXT_FLOOR})", context.test_accuracy),
    );

    let heads = run_heads(&data, &config).unwrap();
    let row = |name: &str| heads.iter().find(|(h, _)| h.model == name).map(|(h, _)| h.clone()).unwrap();
    let (lr, mlp) = (row("LR"), row("MLP"));
    s.line(
        "heads",
        mlp.department_top1 > mlp.reason_top1
            && lr.department_top1 > lr.reason_top1
            && mlp.reason_top1 >= lr.reason_top1 - HEAD_SLACK,
        format!(
            "MLP reason {:.4} / department {:.4}; LR reason {:.4} / department {:.4}; slack {HEAD_SLACK}",
            mlp.reason_top1, mlp.department_top1, lr.reason_top1, lr.department_top1
        ),
    );

    let started = Instant::now();
    let features = run_feature_sets(&data, &config, &config.lr_head()).unwrap();
    let took = started.elapsed();
    let acc = |name: &str| features.iter().find(|r| r.features == name).unwrap().reason_top1;
    let (bow, fusion, oracle) = (acc(FEATURE_BOW), acc(FEATURE_FUSION), acc(FEATURE_ORACLE));
    s.line(
        "feature sets",
        fusion - bow >= FUSION_GAIN && oracle >= ORACLE_FLOOR && took < TABLE3_BUDGET,
        format!(
            "text only {bow:.4}, fusion {fusion:.4} (gain {:.4}, need {FUSION_GAIN}); oracle embeddings {oracle:.4} \
                 (floor {ORACLE_FLOOR}); {:.1}s (budget {}s)",
            fusion - bow,
            took.as_secs_f64(),
            TABLE3_BUDGET.as_secs()
        ),
    );

    let mlp_clf = &heads.iter().find(|(h, _)| h.model == "MLP").unwrap().1;
    let r = run_routing(&data, mlp_clf, config.coverage).unwrap();
    let n = r.calibration_size as f64;
    let coverage_ok = r.calibration_coverage >= config.coverage && r.calibration_coverage <= config.coverage + 1.0 / n;
    let (h, m) = (r.heuristic.rate.unwrap_or(0.0), r.model.rate.unwrap_or(0.0));
    s.line(
        "routing",
        h > m && coverage_ok && r.perfect.rate == Some(0.0),
        format!("transfer heuristic {h:.4} vs model at {:.0}% {m:.4}; calibrated coverage {:.4} in [{}, {:.4}]; perfect router {:?}",
            config.coverage * 100.0, r.calibration_coverage, config.coverage, config.coverage + 1.0 / n, r.perfect.rate),
    );
}

#[test]
fn acceptance() {
    let mut s = Summary { failed: Vec::new() };
    suite_line(&mut s, "pipeline invariants", &[invariants::suite()]);
    suite_line(&mut s, "gradient check", &[gradients::suite()]);
    suite_line(&mut s, "oracle equivalences", &[oracles::suite()]);
    tables(&mut s);
    dataset_mechanics(&mut s);
    golden(&mut s);
    assert!(s.failed.is_empty(), "failing criteria: {:?}", s.failed);
}
