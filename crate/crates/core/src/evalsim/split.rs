use serde::{Deserialize, Serialize};

use super::EvalError;

/// Train/validation/test fractions for a chronological split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), EvalError> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !(*f > 0.0 && f.is_finite())) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(EvalError::InvalidSplit(*self));
        }
        Ok(())
    }

    /// Partition sizes for `n` items: train and validation are rounded to
    /// the nearest integer, test takes the remainder.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = ((self.train * n as f64).round() as usize).min(n);
        let val = ((self.val * n as f64).round() as usize).min(n - train);
        (train, val, n - train - val)
    }
}

/// Anything with an optional timestamp and a stable tie-break key.
pub trait Timestamped {
    fn timestamp(&self) -> Option<i64>;
    fn tie_key(&self) -> &str;
}

/// Train, validation and test blocks.
pub type Split<T> = (Vec<T>, Vec<T>, Vec<T>);

/// Sorts by timestamp (then by tie key) and cuts into consecutive
/// train/validation/test blocks, so nothing in a later block predates
/// anything in an earlier one.
pub fn out_of_time_split<T: Timestamped + Clone>(items: &[T], spec: &SplitSpec) -> Result<Split<T>, EvalError> {
    spec.validate()?;
    let mut keyed = Vec::with_capacity(items.len());
    for (i, t) in items.iter().enumerate() {
        let ts = t.timestamp().ok_or(EvalError::MissingTimestamp(i))?;
        keyed.push((ts, t));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0).then_with(|| a.1.tie_key().cmp(b.1.tie_key())));
    let (n_train, n_val, _) = spec.sizes(items.len());
    let mut sorted = keyed.into_iter().map(|(_, t)| t.clone());
    let train: Vec<T> = sorted.by_ref().take(n_train).collect();
    let val: Vec<T> = sorted.by_ref().take(n_val).collect();
    let test: Vec<T> = sorted.collect();
    Ok((train, val, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Clone, Debug, PartialEq)]
    struct T(Option<i64>, String);

    impl Timestamped for T {
        fn timestamp(&self) -> Option<i64> {
            self.0
        }
        fn tie_key(&self) -> &str {
            &self.1
        }
    }

    #[test]
    fn ten_items() {
        let items: Vec<T> = (0..10).map(|i| T(Some(i), i.to_string())).collect();
        let (a, b, c) = out_of_time_split(&items, &SplitSpec::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
    }

    #[test]
    fn order_invariance_and_missing() {
        let items: Vec<T> = (0..37).map(|i| T(Some((i * 7919) % 101), format!("{i:03}"))).collect();
        let mut rev = items.clone();
        rev.reverse();
        assert_eq!(
            out_of_time_split(&items, &SplitSpec::default()).unwrap(),
            out_of_time_split(&rev, &SplitSpec::default()).unwrap()
        );
        let bad = vec![T(Some(1), "a".into()), T(None, "b".into())];
        assert_eq!(out_of_time_split(&bad, &SplitSpec::default()), Err(EvalError::MissingTimestamp(1)));
    }

    #[test]
    fn bad_fractions() {
        assert!(SplitSpec { train: 0.5, val: 0.1, test: 0.1 }.validate().is_err());
        assert!(SplitSpec { train: 1.0, val: 0.0, test: 0.0 }.validate().is_err());
    }
}
