//! Library results against brute-force or externally computed references.

mod common;

use std::collections::BTreeMap;

use proptest::prelude::*;

use triage::evalsim::topk_accuracy;
use triage::features::FeatureVector;
use triage::models::{accuracy, softmax, train_logistic, train_mlp, Penalty, Samples, TrainConfig};
use triage::routing::{calibrate_threshold, department_scores, DepartmentMap};

/// Test accuracy of scikit-learn `LogisticRegression(C=1.0)` (lbfgs, L2)
/// fitted on the train rows of `tests/fixtures/blobs.csv`.
const SKLEARN_LR_BLOBS_ACCURACY: f64 = 0.72;

fn blob_splits() -> (Vec<FeatureVector>, Vec<usize>, Vec<FeatureVector>, Vec<usize>) {
    let (x, y, train) = common::blobs();
    let (mut xt, mut yt, mut xs, mut ys) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for ((x, y), t) in x.into_iter().zip(y).zip(train) {
        if t {
            xt.push(x);
            yt.push(y);
        } else {
            xs.push(x);
            ys.push(y);
        }
    }
    (xt, yt, xs, ys)
}

#[test]
fn no_hidden_perceptron_matches_logistic_regression_on_blobs() {
    let (xt, yt, xs, ys) = blob_splits();
    let train = Samples::new(&xt, &yt, 3);
    let test = Samples::new(&xs, &ys, 3);
    let lr = train_logistic(train, &TrainConfig::default(), Penalty::L2, 1.0).unwrap();
    let config = TrainConfig {
        seed: 7,
        max_epochs: 500,
        learning_rate: 0.05,
        batch_size: 32,
        patience: 50,
        l2: 1.0 / 200.0,
        validation_fraction: 0.0,
        ..TrainConfig::default()
    };
    let mlp = train_mlp(train, None, &config, &[]).unwrap();
    let a_lr = accuracy(&lr, &test).unwrap();
    let a_mlp = accuracy(&mlp, &test).unwrap();
    assert!((a_lr - SKLEARN_LR_BLOBS_ACCURACY).abs() <= 0.01, "LR {a_lr} vs scikit-learn {SKLEARN_LR_BLOBS_ACCURACY}");
    assert!((a_lr - a_mlp).abs() <= 0.01, "LR {a_lr} vs no-hidden MLP {a_mlp}");
}

fn brute_force_groupby(p: &[f64], classes: &[String], map: &DepartmentMap) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, f64> = map.departments().iter().map(|d| (d.clone(), 0.0)).collect();
    for (c, &x) in classes.iter().zip(p) {
        let d = map.reasons().find(|(r, _)| *r == c.as_str()).unwrap().1;
        *out.get_mut(d).unwrap() += x;
    }
    out
}

fn membership(ranked: &[Vec<usize>], truths: &[usize], k: usize) -> f64 {
    let mut hits = 0;
    for (r, t) in ranked.iter().zip(truths) {
        let mut found = false;
        for p in r.iter().take(k) {
            if p == t {
                found = true;
            }
        }
        hits += usize::from(found);
    }
    hits as f64 / truths.len() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn department_scores_equal_group_by(
        z in prop::collection::vec(-20.0f64..20.0, 10),
        depts in prop::collection::vec(0usize..4, 10),
    ) {
        let classes: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        let reasons = classes.iter().zip(&depts).map(|(c, d)| (c.clone(), format!("d{d}"))).collect();
        let map = DepartmentMap::new(["d0", "d1", "d2", "d3"], reasons).unwrap();
        let p = softmax(&z);
        let fast = department_scores(&p, &classes, &map).unwrap().to_map();
        let slow = brute_force_groupby(&p, &classes, &map);
        for (d, s) in &slow {
            prop_assert!((fast[d] - s).abs() <= 1e-12);
        }
        prop_assert_eq!(fast.len(), slow.len());
    }

    #[test]
    fn topk_equals_membership(
        rows in prop::collection::vec((Just((0..6).collect::<Vec<usize>>()).prop_shuffle(), 0usize..6), 1..50),
        k in 1usize..7,
    ) {
        let ranked: Vec<Vec<usize>> = rows.iter().map(|r| r.0.clone()).collect();
        let truths: Vec<usize> = rows.iter().map(|r| r.1).collect();
        prop_assert_eq!(topk_accuracy(&ranked, &truths, k).unwrap(), membership(&ranked, &truths, k));
    }

    #[test]
    fn threshold_is_the_order_statistic(scores in prop::collection::vec(0.0f64..1.0, 1..400), rho in 0.01f64..1.0) {
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let n = scores.len();
        // smallest k with k/n >= rho
        let k = (1..=n).find(|&k| k as f64 >= rho * n as f64 - 1e-9).unwrap();
        prop_assert_eq!(calibrate_threshold(&scores, rho).unwrap(), sorted[k - 1]);
    }
}

#[allow(dead_code)]
pub fn suite() -> Vec<(&'static str, fn())> {
    vec![
        ("department scores vs group-by", department_scores_equal_group_by),
        ("top-k accuracy vs membership", topk_equals_membership),
        ("threshold vs order statistic", threshold_is_the_order_statistic),
        ("no-hidden MLP vs LR on blobs", no_hidden_perceptron_matches_logistic_regression_on_blobs),
    ]
}
