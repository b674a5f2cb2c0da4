use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, Samples};

/// Models whose training objective can be evaluated and differentiated on a batch.
pub trait Differentiable: Clone {
    fn parameters(&self) -> Vec<f64>;
    fn set_parameters(&mut self, params: &[f64]);
    /// Objective on `batch`; writes the analytic gradient into `grad`.
    fn loss_and_gradient(&self, batch: &Samples<'_>, grad: &mut [f64]) -> f64;

    /// Whether the objective is non-differentiable somewhere between the two
    /// parameter vectors (e.g. a rectifier changed sign).
    fn kink_between(&self, _batch: &Samples<'_>, _a: &[f64], _b: &[f64]) -> bool {
        false
    }
}

/// Number of parameters probed when the model has more than this many.
pub const PROBED_PARAMETERS: usize = 64;
const GRADCHECK_SEED: u64 = 0x6772_6164;

/// Compares the analytic gradient against central finite differences on a
/// seeded random subset of parameters and returns the largest relative
/// error `|a − n| / max(|a| + |n|, 1e-6)`. Probes that straddle a kink of
/// a piecewise-linear activation are skipped.
pub fn gradient_check<M: Differentiable>(model: &M, batch: &Samples<'_>, epsilon: f64) -> Result<f64, ModelError> {
    if !(epsilon > 0.0 && epsilon <= 1e-2) {
        return Err(ModelError::InvalidEpsilon(epsilon));
    }
    let base = model.parameters();
    let n = base.len();
    let mut analytic = vec![0.0; n];
    model.loss_and_gradient(batch, &mut analytic);

    let mut rng = ChaCha8Rng::seed_from_u64(GRADCHECK_SEED);
    let order: Vec<usize> = sample(&mut rng, n, n).into_vec();
    let mut probe = model.clone();
    let mut scratch = vec![0.0; n];
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for i in order {
        if probed == PROBED_PARAMETERS {
            break;
        }
        let mut plus = base.clone();
        plus[i] += epsilon;
        let mut minus = base.clone();
        minus[i] -= epsilon;
        if model.kink_between(batch, &plus, &minus) {
            continue;
        }
        probe.set_parameters(&plus);
        let lp = probe.loss_and_gradient(batch, &mut scratch);
        probe.set_parameters(&minus);
        let lm = probe.loss_and_gradient(batch, &mut scratch);
        let numeric = (lp - lm) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(rel);
        probed += 1;
    }
    Ok(worst)
}
