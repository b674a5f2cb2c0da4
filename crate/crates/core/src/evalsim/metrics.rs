use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::routing::{DepartmentMap, RoutingDecision};

/// Fraction of rows whose truth appears in the first `k` entries of the
/// ranked prediction.
pub fn topk_accuracy<L: PartialEq>(ranked: &[Vec<L>], truths: &[L], k: usize) -> Result<f64, EvalError> {
    check_lengths(ranked.len(), truths.len())?;
    if k == 0 {
        return Err(EvalError::InvalidK);
    }
    let hits = ranked.iter().zip(truths).filter(|(r, t)| r.iter().take(k).any(|p| p == *t)).count();
    Ok(hits as f64 / truths.len() as f64)
}

fn check_lengths(a: usize, b: usize) -> Result<(), EvalError> {
    if a != b {
        return Err(EvalError::LengthMismatch { predictions: a, truths: b });
    }
    if a == 0 {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Indices of `values` ordered by decreasing value; ties go to the lower
/// index.
pub fn rank_indices(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx
}

/// Top-k department accuracy, where departments are ranked by the sum of
/// their reasons' probabilities.
pub fn department_accuracy(
    probabilities: &[Vec<f64>],
    classes: &[String],
    map: &DepartmentMap,
    truths: &[String],
    k: usize,
) -> Result<f64, EvalError> {
    check_lengths(probabilities.len(), truths.len())?;
    let index = map.class_index(classes)?;
    let mut ranked = Vec::with_capacity(probabilities.len());
    for p in probabilities {
        let scores = crate::routing::aggregate(p, &index, map)?;
        ranked.push(scores.ranked().into_iter().map(|i| scores.departments[i].clone()).collect::<Vec<_>>());
    }
    topk_accuracy(&ranked, truths, k)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferStats {
    /// `None` when nothing was auto-routed.
    pub rate: Option<f64>,
    pub coverage: f64,
    pub auto_routed: usize,
    pub transferred: usize,
    pub total: usize,
}

/// Share of auto-routed chats whose department differs from the truth.
/// Chats sent to human triage count toward neither side of the rate.
pub fn transfer_rate(decisions: &[RoutingDecision], truths: &[String]) -> Result<TransferStats, EvalError> {
    check_lengths(decisions.len(), truths.len())?;
    let mut auto = 0;
    let mut transferred = 0;
    for (d, t) in decisions.iter().zip(truths) {
        if d.auto_routed {
            auto += 1;
            if &d.department != t {
                transferred += 1;
            }
        }
    }
    let total = truths.len();
    Ok(TransferStats {
        rate: (auto > 0).then(|| transferred as f64 / auto as f64),
        coverage: auto as f64 / total as f64,
        auto_routed: auto,
        transferred,
        total,
    })
}
