//! Property suites for the numeric pipeline.

mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triage::dialog::DialogMemory;
use triage::evalsim::{out_of_time_split, rank_indices, SplitSpec, Timestamped};
use triage::features::FeatureVector;
use triage::models::{softmax, LinearModel, MlpModel, ProbabilisticClassifier};
use triage::reason::top_reasons;
use triage::routing::{aggregate, calibrate_threshold, route, DepartmentMap, RoutingPolicy, RuleSet};
use triage::tabular::{Column, FeatureSchema, FittedTransform, TabularRecord};

fn map() -> DepartmentMap {
    let reasons = (0..12).map(|i| (format!("r{i:02}"), format!("d{}", i % 4))).collect();
    DepartmentMap::new(["d0", "d1", "d2", "d3"], reasons).unwrap()
}

fn classes() -> Vec<String> {
    (0..12).map(|i| format!("r{i:02}")).collect()
}

fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, n).prop_map(|z| softmax(&z))
}

#[derive(Clone, Debug)]
struct Item(i64, String);

impl Timestamped for Item {
    fn timestamp(&self) -> Option<i64> {
        Some(self.0)
    }
    fn tie_key(&self) -> &str {
        &self.1
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-700.0f64..700.0, 1..40)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let best = rank_indices(&z)[0];
        prop_assert_eq!(p[best], p[rank_indices(&p)[0]]);
    }

    #[test]
    fn model_probabilities_sum_to_one(
        seed in any::<u64>(),
        x in prop::collection::vec(-10.0f64..10.0, 6),
        hidden in prop::collection::vec(1usize..6, 0..3),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = MlpModel::init(6, &hidden, 5, &mut rng);
        let weights: Vec<Vec<f64>> = (0..5).map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
        let lr = LinearModel::from_parameters(weights, (0..5).map(|_| rng.random_range(-5.0..5.0)).collect()).unwrap();
        let v = FeatureVector::from_dense(&x);
        for p in [mlp.predict_proba(&v).unwrap(), lr.predict_proba(&v).unwrap()] {
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn one_hot_blocks_and_standardization(
        rows in prop::collection::vec((0usize..4, -1e3f64..1e3, any::<bool>(), 0usize..3), 2..60),
    ) {
        let schema = FeatureSchema::new(vec![
            Column::categorical("colour", &["red", "green"]),
            Column::numeric("amount"),
            Column::categorical("size", &["s", "m", "l"]),
        ]).unwrap();
        let colours = ["red", "green", "blue", "grey"];
        let records: Vec<TabularRecord> = rows.iter().map(|(c, x, present, s)| {
            let r = TabularRecord::new().with_category("colour", colours[*c]).with_number("amount", *x);
            if *present { r.with_category("size", ["s", "m", "l"][*s]) } else { r }
        }).collect();
        let t = FittedTransform::fit(&schema, &records).unwrap();
        let encoded: Vec<Vec<f64>> = records.iter().map(|r| t.transform(r)).collect();
        for enc in t.columns() {
            if enc.width() > 1 {
                for row in &encoded {
                    let block = &row[enc.offset()..enc.offset() + enc.width()];
                    prop_assert_eq!(block.iter().sum::<f64>(), 1.0);
                    prop_assert!(block.iter().all(|&v| v == 0.0 || v == 1.0));
                }
            } else {
                let xs: Vec<f64> = encoded.iter().map(|row| row[enc.offset()]).collect();
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
                prop_assert!(mean.abs() <= 1e-9, "mean {}", mean);
                let constant = rows.iter().all(|r| r.1 == rows[0].1);
                if !constant {
                    prop_assert!((var - 1.0).abs() <= 1e-9, "var {}", var);
                }
            }
        }
        // unseen categories land in the unknown slot
        let unseen = t.transform(&TabularRecord::new().with_category("colour", "purple"));
        let c = &t.columns()[0];
        prop_assert_eq!(unseen[c.offset() + c.width() - 1], 1.0);
    }

    #[test]
    fn top_k_is_a_prefix(p in distribution(12), k in 1usize..12) {
        let cls = classes();
        let a = top_reasons(&p, &cls, k).unwrap();
        let b = top_reasons(&p, &cls, k + 1).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert_eq!(&b[..k], &a[..]);
        prop_assert!(b.windows(2).all(|w| w[0].probability >= w[1].probability));
    }

    #[test]
    fn department_scores_conserve_mass(p in distribution(12)) {
        let m = map();
        let index = m.class_index(&classes()).unwrap();
        let s = aggregate(&p, &index, &m).unwrap();
        prop_assert!((s.scores.iter().sum::<f64>() - p.iter().sum::<f64>()).abs() <= 1e-9);
        prop_assert!(s.scores.iter().all(|&x| x >= 0.0));
        let best = s.best().1;
        prop_assert!(best >= p.iter().cloned().fold(0.0, f64::max) - 1e-12);
    }

    #[test]
    fn routing_respects_threshold(p in distribution(12), tau in 0.0f64..1.0) {
        let m = map();
        let s = aggregate(&p, &m.class_index(&classes()).unwrap(), &m).unwrap();
        let policy = RoutingPolicy { coverage: 0.8, threshold: tau, fallback: "human_triage".into() };
        let top = top_reasons(&p, &classes(), 3).unwrap();
        let d = route(&s, top.clone(), &policy, &RuleSet::default(), &DialogMemory::new("s", "x"));
        prop_assert_eq!(d.auto_routed, s.max_score() >= tau);
        prop_assert_eq!(&d.predicted_department, s.best_department());
        prop_assert_eq!(d.top_reasons, top);
        if d.auto_routed {
            prop_assert_eq!(&d.department, &d.predicted_department);
        } else {
            prop_assert_eq!(d.department.as_str(), "human_triage");
        }
    }

    #[test]
    fn calibrated_coverage_is_tight(scores in prop::collection::vec(0.0f64..1.0, 1..300), rho in 0.05f64..1.0) {
        let tau = calibrate_threshold(&scores, rho).unwrap();
        let n = scores.len() as f64;
        let covered = scores.iter().filter(|&&s| s >= tau).count() as f64 / n;
        let ties = scores.iter().filter(|&&s| s == tau).count() as f64 / n;
        prop_assert!(covered >= rho - 1e-12);
        prop_assert!(covered <= rho + 1.0 / n + ties, "covered {} rho {}", covered, rho);
    }

    #[test]
    fn split_is_a_chronological_partition(ts in prop::collection::vec(0i64..50, 3..200)) {
        let items: Vec<Item> = ts.iter().enumerate().map(|(i, &t)| Item(t, format!("{i:04}"))).collect();
        let (a, b, c) = out_of_time_split(&items, &SplitSpec::default()).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), items.len());
        let (na, nb, _) = SplitSpec::default().sizes(items.len());
        prop_assert_eq!((a.len(), b.len()), (na, nb));
        let max = |v: &[Item]| v.iter().map(|i| i.0).max();
        let min = |v: &[Item]| v.iter().map(|i| i.0).min();
        if let (Some(x), Some(y)) = (max(&a), min(&b)) { prop_assert!(x <= y); }
        if let (Some(x), Some(y)) = (max(&b), min(&c)) { prop_assert!(x <= y); }
        if let (Some(x), Some(y)) = (max(&a), min(&c)) { prop_assert!(x <= y); }
    }
}

/// Every property above, for the acceptance summary.
#[allow(dead_code)]
pub fn suite() -> Vec<(&'static str, fn())> {
    vec![
        ("softmax", softmax_is_a_distribution),
        ("model probabilities", model_probabilities_sum_to_one),
        ("one-hot and standardization", one_hot_blocks_and_standardization),
        ("top-k prefix", top_k_is_a_prefix),
        ("department mass", department_scores_conserve_mass),
        ("threshold routing", routing_respects_threshold),
        ("calibrated coverage", calibrated_coverage_is_tight),
        ("chronological split", split_is_a_chronological_partition),
    ]
}
