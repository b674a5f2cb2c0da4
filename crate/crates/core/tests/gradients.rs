//! Analytic gradients against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use triage::features::FeatureVector;
use triage::models::{gradient_check, Differentiable, LinearModel, MlpModel, Penalty, Samples};

const EPSILON: f64 = 1e-5;
const TOLERANCE: f64 = 1e-4;

fn batch(rng: &mut ChaCha8Rng, n: usize, d: usize, k: usize, sparse: bool) -> (Vec<FeatureVector>, Vec<usize>) {
    let x = (0..n)
        .map(|_| {
            let row: Vec<f64> = (0..d)
                .map(|_| if sparse && rng.random_bool(0.7) { 0.0 } else { rng.random_range(-2.0..2.0) })
                .collect();
            FeatureVector::from_dense(&row)
        })
        .collect();
    let y = (0..n).map(|i| if i < k { i } else { rng.random_range(0..k) }).collect();
    (x, y)
}

#[test]
fn logistic_regression_gradient() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, k) = (rng.random_range(2..30), rng.random_range(2..8));
        let (x, y) = batch(&mut rng, 32, d, k, seed % 2 == 0);
        let mut m = LinearModel::zeros(d, k, Penalty::L2, rng.random_range(0.1..10.0));
        let p: Vec<f64> = (0..m.parameters().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        m.set_parameters(&p);
        let err = gradient_check(&m, &Samples::new(&x, &y, k), EPSILON).unwrap();
        assert!(err < TOLERANCE, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn perceptron_gradient() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let (d, k) = (rng.random_range(2..20), rng.random_range(2..6));
        let hidden: Vec<usize> = (0..rng.random_range(0..3)).map(|_| rng.random_range(2..12)).collect();
        let (x, y) = batch(&mut rng, 16, d, k, seed % 2 == 1);
        let m = MlpModel::init(d, &hidden, k, &mut rng).with_l2(rng.random_range(0.0..0.1));
        let err = gradient_check(&m, &Samples::new(&x, &y, k), EPSILON).unwrap();
        assert!(err < TOLERANCE, "seed {seed} hidden {hidden:?}: relative error {err:e}");
    }
}

#[allow(dead_code)]
pub fn suite() -> Vec<(&'static str, fn())> {
    vec![("logistic regression", logistic_regression_gradient), ("perceptron", perceptron_gradient)]
}
