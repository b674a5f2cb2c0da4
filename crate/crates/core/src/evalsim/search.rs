use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::EvalError;

/// One hyperparameter assignment.
pub type Config = BTreeMap<String, Value>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamSpec {
    Choice { values: Vec<Value> },
    Uniform { low: f64, high: f64, grid_points: usize },
    LogUniform { low: f64, high: f64, grid_points: usize },
}

impl ParamSpec {
    pub fn choice(values: impl IntoIterator<Item = Value>) -> Self {
        ParamSpec::Choice { values: values.into_iter().collect() }
    }

    pub fn log_uniform(low: f64, high: f64, grid_points: usize) -> Self {
        ParamSpec::LogUniform { low, high, grid_points }
    }

    fn validate(&self, name: &str) -> Result<(), EvalError> {
        let ok = match self {
            ParamSpec::Choice { values } => !values.is_empty(),
            ParamSpec::Uniform { low, high, grid_points } => {
                low <= high && low.is_finite() && high.is_finite() && *grid_points >= 1
            }
            ParamSpec::LogUniform { low, high, grid_points } => {
                *low > 0.0 && low <= high && high.is_finite() && *grid_points >= 1
            }
        };
        if ok {
            Ok(())
        } else {
            Err(EvalError::InvalidSpace(format!("parameter {name:?} has an empty or invalid range")))
        }
    }

    fn grid(&self) -> Vec<Value> {
        let spaced = |lo: f64, hi: f64, n: usize| -> Vec<f64> {
            if n == 1 {
                return vec![lo];
            }
            (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
        };
        match self {
            ParamSpec::Choice { values } => values.clone(),
            ParamSpec::Uniform { low, high, grid_points } => {
                spaced(*low, *high, *grid_points).into_iter().map(Value::from).collect()
            }
            ParamSpec::LogUniform { low, high, grid_points } => {
                spaced(low.ln(), high.ln(), *grid_points).into_iter().map(|x| Value::from(x.exp())).collect()
            }
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Value {
        match self {
            ParamSpec::Choice { values } => values[rng.random_range(0..values.len())].clone(),
            ParamSpec::Uniform { low, high, .. } => Value::from(low + (high - low) * rng.random::<f64>()),
            ParamSpec::LogUniform { low, high, .. } => {
                Value::from((low.ln() + (high.ln() - low.ln()) * rng.random::<f64>()).exp())
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: BTreeMap<String, ParamSpec>,
    /// Configurations evaluated before any generated ones (e.g. defaults).
    #[serde(default)]
    pub initial: Vec<Config>,
    pub budget: usize,
}

impl SearchSpace {
    pub fn new(budget: usize) -> Self {
        SearchSpace { params: BTreeMap::new(), initial: Vec::new(), budget }
    }

    pub fn param(mut self, name: &str, spec: ParamSpec) -> Self {
        self.params.insert(name.to_owned(), spec);
        self
    }

    pub fn with_initial(mut self, config: Config) -> Self {
        self.initial.push(config);
        self
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.budget == 0 {
            return Err(EvalError::InvalidSpace("budget must be at least 1".into()));
        }
        self.params.iter().try_for_each(|(n, p)| p.validate(n))
    }

    /// Size of the grid (product of per-parameter grid sizes).
    pub fn grid_size(&self) -> usize {
        self.params.values().map(|p| p.grid().len()).product()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    /// Cartesian product in parameter-name order, truncated to the budget.
    Grid,
    Random {
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: Config,
    pub score: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Config,
    pub best_score: f64,
    pub best_index: usize,
    pub trace: Vec<Trial>,
}

fn grid_configs(space: &SearchSpace, limit: usize) -> Vec<Config> {
    let axes: Vec<(&String, Vec<Value>)> = space.params.iter().map(|(n, p)| (n, p.grid())).collect();
    let total: usize = axes.iter().map(|(_, v)| v.len()).product();
    (0..total.min(limit))
        .map(|mut i| {
            // last parameter varies fastest
            let mut cfg = Config::new();
            for (name, values) in axes.iter().rev() {
                cfg.insert((*name).clone(), values[i % values.len()].clone());
                i /= values.len();
            }
            cfg
        })
        .collect()
}

/// Evaluates at most `space.budget` configurations and returns the one with
/// the highest objective (earliest wins ties). A failing objective is
/// recorded in the trace and skipped.
pub fn search<E: std::fmt::Display>(
    space: &SearchSpace,
    strategy: Strategy,
    mut objective: impl FnMut(&Config) -> Result<f64, E>,
) -> Result<SearchResult, EvalError> {
    space.validate()?;
    let mut configs: Vec<Config> = space.initial.iter().take(space.budget).cloned().collect();
    let remaining = space.budget - configs.len();
    match strategy {
        Strategy::Grid => configs.extend(grid_configs(space, remaining)),
        Strategy::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..remaining {
                configs.push(space.params.iter().map(|(n, p)| (n.clone(), p.sample(&mut rng))).collect());
            }
        }
    }
    let mut trace = Vec::with_capacity(configs.len());
    let mut best: Option<(usize, f64)> = None;
    for (index, config) in configs.into_iter().enumerate() {
        let (score, error) = match objective(&config) {
            Ok(s) if s.is_finite() => (Some(s), None),
            Ok(s) => (None, Some(format!("objective returned {s}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        if let Some(e) = &error {
            log::warn!("search trial {index} failed: {e}");
        }
        if let Some(s) = score {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((index, s));
            }
        }
        trace.push(Trial { index, config, score, error });
    }
    let (best_index, best_score) = best.ok_or(EvalError::AllTrialsFailed)?;
    Ok(SearchResult { best: trace[best_index].config.clone(), best_score, best_index, trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x_of(c: &Config) -> f64 {
        c["x"].as_f64().unwrap()
    }

    #[test]
    fn grid_finds_quadratic_peak() {
        let space = SearchSpace::new(100).param("x", ParamSpec::choice((1..=5).map(Value::from)));
        let r = search(&space, Strategy::Grid, |c| Ok::<_, String>(-(x_of(c) - 3.0).powi(2))).unwrap();
        assert_eq!(x_of(&r.best), 3.0);
        assert_eq!(r.trace.len(), 5);
    }

    #[test]
    fn budget_one() {
        let space = SearchSpace::new(1).param("x", ParamSpec::log_uniform(0.1, 10.0, 5));
        for strategy in [Strategy::Grid, Strategy::Random { seed: 3 }] {
            let r = search(&space, strategy, |c| Ok::<_, String>(x_of(c))).unwrap();
            assert_eq!(r.trace.len(), 1);
            assert_eq!(r.best, r.trace[0].config);
        }
    }

    #[test]
    fn failures_are_recorded_and_skipped() {
        let space = SearchSpace::new(10).param("x", ParamSpec::choice((0..4).map(Value::from)));
        let r = search(&space, Strategy::Grid, |c| if x_of(c) == 3.0 { Err("boom") } else { Ok(x_of(c)) }).unwrap();
        assert_eq!(x_of(&r.best), 2.0);
        assert_eq!(r.trace[3].error.as_deref(), Some("boom"));
        assert!(matches!(search(&space, Strategy::Grid, |_| Err::<f64, _>("no")), Err(EvalError::AllTrialsFailed)));
    }

    #[test]
    fn random_is_seeded_and_initial_runs_first() {
        let init: Config = [("x".to_string(), Value::from(1.0))].into();
        let space = SearchSpace::new(20).param("x", ParamSpec::log_uniform(1e-3, 1e3, 7)).with_initial(init.clone());
        let a = search(&space, Strategy::Random { seed: 9 }, |c| Ok::<_, String>(-x_of(c).ln().abs())).unwrap();
        let b = search(&space, Strategy::Random { seed: 9 }, |c| Ok::<_, String>(-x_of(c).ln().abs())).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.trace[0].config, init);
        assert!(a.trace.iter().all(|t| (1e-3..=1e3).contains(&x_of(&t.config))));
    }

    #[test]
    fn grid_covers_product_in_order() {
        let space = SearchSpace::new(100)
            .param("a", ParamSpec::choice([Value::from("l1"), Value::from("l2")]))
            .param("b", ParamSpec::Uniform { low: 0.0, high: 1.0, grid_points: 3 });
        assert_eq!(space.grid_size(), 6);
        let r = search(&space, Strategy::Grid, |c| Ok::<_, String>(c["b"].as_f64().unwrap())).unwrap();
        assert_eq!(r.trace.len(), 6);
        assert_eq!(r.trace[1].config["b"], Value::from(0.5));
        assert_eq!(r.trace[3].config["a"], Value::from("l2"));
    }
}
