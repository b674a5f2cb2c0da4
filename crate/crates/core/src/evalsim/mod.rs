//! Splitting, metrics, hyperparameter search and reports.

mod metrics;
pub mod reference;
mod report;
mod search;
mod split;

use thiserror::Error;

pub use metrics::{department_accuracy, rank_indices, topk_accuracy, transfer_rate, TransferStats};
pub use report::{percent, render_report, Baselines, ContextRow, FeatureRow, HeadRow, MetricReport, RoutingRow};
pub use search::{search, Config, ParamSpec, SearchResult, SearchSpace, Strategy, Trial};
pub use split::{out_of_time_split, Split, SplitSpec, Timestamped};

use crate::routing::RoutingError;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("split fractions must be positive and sum to 1: {0:?}")]
    InvalidSplit(SplitSpec),
    #[error("item {0} has no timestamp")]
    MissingTimestamp(usize),
    #[error("{predictions} predictions for {truths} truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("every search trial failed")]
    AllTrialsFailed,
    #[error(transparent)]
    Routing(#[from] RoutingError),
}
