//! Customer-support triage engine.
//!
//! A dialog-state machine drives each chat; message-processing handlers
//! run a binary context gate and a contact-reason classifier that fuses
//! bag-of-words (or precomputed embedding) text features with encoded user
//! profile features; a routing policy aggregates reason probabilities into
//! department scores and auto-routes only above a coverage-calibrated
//! confidence threshold.

pub mod artifact;
pub mod context;
pub mod corpus;
pub mod dialog;
pub mod evalsim;
pub mod experiment;
pub mod features;
pub mod models;
pub mod pipeline;
pub mod reason;
pub mod routing;
pub mod service;
pub mod tabular;
pub mod text;
pub mod workflow;
