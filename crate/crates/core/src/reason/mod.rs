//! Contact-reason classification: text representation, tabular profile
//! encoding and a probabilistic head over the kept reason classes.

mod embedding;
mod model;
mod provider;

use thiserror::Error;

pub use embedding::{EmbeddingTable, EMBEDDING_MAGIC, EMBEDDING_VERSION};
pub use model::{
    filter_classes, top_reasons, train_reason_model, BowSettings, ClassFilter, Featurizer, Head, Prediction,
    ReasonClassifier, ReasonExample, ReasonModel, ReasonTrainOptions, ReasonTraining, TextFeatures, REASON_MODEL_KIND,
};
pub use provider::{
    truncate_words, BowProvider, EmbeddingProvider, EmbeddingServer, FileProvider, ProviderKind, ProviderSpec,
    RemoteConfig, RemoteProvider,
};

use crate::artifact::ArtifactError;
use crate::models::ModelError;
use crate::tabular::TabularError;
use crate::text::TextError;

#[derive(Debug, Error)]
pub enum ReasonError {
    #[error("embedding dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no embedding for {0:?}")]
    MissingEmbedding(String),
    #[error("embedding service did not answer within {0} ms")]
    RemoteTimeout(u64),
    #[error("embedding service: {0}")]
    Remote(String),
    #[error("bad embedding file: {0}")]
    BadEmbeddingFile(String),
    #[error("provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("no class has at least {0} training examples")]
    EmptyKeptSet(usize),
    #[error("minimum class count must be at least 1")]
    InvalidMinCount,
    #[error("k must be at least 1")]
    InvalidK,
    #[error("model has neither text nor tabular features")]
    NoFeatures,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tabular(#[from] TabularError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
}
