//! Published production figures, kept for side-by-side comparison in
//! reports. They come from a private dataset and are never used as test
//! oracles for the synthetic corpus.

/// Chats in the contact-reason dataset and its chronological split.
pub const DATASET_CHATS: usize = 639_159;
pub const TRAIN_CHATS: usize = 511_327;
pub const VALIDATION_CHATS: usize = 63_916;
pub const TEST_CHATS: usize = 63_916;

/// Distinct contact reasons before and after dropping classes with fewer
/// than [`MIN_CLASS_COUNT`] training samples.
pub const REASONS_BEFORE_FILTER: usize = 306;
pub const REASONS_AFTER_FILTER: usize = 235;
pub const MIN_CLASS_COUNT: usize = 50;

/// Subset used to fine-tune the transformer text encoder (train, val, test).
pub const ENCODER_SUBSET: (usize, usize, usize) = (178_578, 19_843, 66_141);

/// Context-gate annotation corpus.
pub const CONTEXT_ANNOTATED: usize = 5_348;
pub const CONTEXT_POSITIVE: usize = 2_926;
pub const CONTEXT_NEGATIVE: usize = 2_422;
pub const CONTEXT_ACCURACY: f64 = 0.85;
pub const CONTEXT_VOCABULARY: usize = 5_000;
pub const CONTEXT_NGRAM_MAX: usize = 3;

pub const TABULAR_FEATURES: usize = 66;
pub const TOKEN_TRUNCATION: usize = 64;
pub const AUTO_ROUTE_COVERAGE: f64 = 0.8;
pub const SEARCH_BUDGET: usize = 100;

/// Reason and department accuracy by classifier head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeadReference {
    pub model: &'static str,
    pub reason_top1: f64,
    pub reason_top3: f64,
    pub department_top1: f64,
    pub department_top3: f64,
}

pub const HEADS: [HeadReference; 3] = [
    HeadReference {
        model: "LR",
        reason_top1: 0.428,
        reason_top3: 0.636,
        department_top1: 0.778,
        department_top3: 0.846,
    },
    HeadReference {
        model: "RF",
        reason_top1: 0.407,
        reason_top3: 0.612,
        department_top1: 0.752,
        department_top3: 0.827,
    },
    HeadReference {
        model: "MLP",
        reason_top1: 0.441,
        reason_top3: 0.651,
        department_top1: 0.782,
        department_top3: 0.850,
    },
];

/// Reason top-1 accuracy by text representation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureReference {
    pub features: &'static str,
    pub reason_top1: f64,
}

pub const FEATURE_SETS: [FeatureReference; 6] = [
    FeatureReference { features: "BoW", reason_top1: 0.3814 },
    FeatureReference { features: "BoW + tabular", reason_top1: 0.4411 },
    FeatureReference { features: "BERT classifier", reason_top1: 0.4557 },
    FeatureReference { features: "BERT logits + tabular", reason_top1: 0.5310 },
    FeatureReference { features: "BERT last layer + tabular", reason_top1: 0.5320 },
    FeatureReference { features: "BERT last 4 layers + tabular", reason_top1: 0.5305 },
];

/// Production routing outcomes. Coverage is `None` when not applicable.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoutingReference {
    pub strategy: &'static str,
    pub coverage: Option<f64>,
    pub transfer_rate: f64,
    pub messages_per_ticket: f64,
}

pub const ROUTING: [RoutingReference; 5] = [
    RoutingReference { strategy: "Human triage", coverage: None, transfer_rate: 0.128, messages_per_ticket: 18.2 },
    RoutingReference { strategy: "Heuristics", coverage: Some(1.0), transfer_rate: 0.183, messages_per_ticket: 11.2 },
    RoutingReference { strategy: "V1 BoW", coverage: Some(0.8), transfer_rate: 0.139, messages_per_ticket: 13.2 },
    RoutingReference { strategy: "V2 BERT", coverage: Some(0.8), transfer_rate: 0.103, messages_per_ticket: 13.7 },
    RoutingReference { strategy: "V2 BERT", coverage: Some(1.0), transfer_rate: 0.132, messages_per_ticket: 14.2 },
];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalsim::SplitSpec;

    #[test]
    fn split_counts_add_up() {
        assert_eq!(TRAIN_CHATS + VALIDATION_CHATS + TEST_CHATS, DATASET_CHATS);
        assert_eq!(SplitSpec::default().sizes(DATASET_CHATS), (TRAIN_CHATS, VALIDATION_CHATS, TEST_CHATS));
    }

    #[test]
    fn context_counts_add_up() {
        assert_eq!(CONTEXT_POSITIVE + CONTEXT_NEGATIVE, CONTEXT_ANNOTATED);
    }

    #[test]
    fn filtering_drops_classes() {
        assert_eq!(REASONS_BEFORE_FILTER - REASONS_AFTER_FILTER, 71);
    }
}
