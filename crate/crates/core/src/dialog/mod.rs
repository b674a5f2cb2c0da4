//! Finite-state dialog engine.
//!
//! A [`FlowDefinition`] binds each state to a handler and maps the
//! handler's decision key to the next state. Handlers read the
//! [`DialogMemory`] and return slot writes plus outbound messages; the
//! [`Engine`] commits them only if the transition exists.

mod engine;
mod flow;
mod handlers;
mod memory;
mod template;

use thiserror::Error;

pub use engine::{Action, Engine, StepOutput, DEFAULT_MAX_AUTO_STEPS};
pub use flow::{load_flow, FlowDefinition, StateSpec};
pub use handlers::{
    is_identifier, Emit, FormAnswer, FormFill, Handler, HandlerContext, HandlerError, HandlerRegistry, HandlerResult,
    OpenSession, Outbound,
};
pub use memory::{DialogMemory, Event, HistoryEntry, HistoryKind, InboundEvent};
pub use template::{render_template, Template, TemplateStore, VariantSelector};

pub type StateId = String;

#[derive(Debug, Error, PartialEq)]
pub enum DialogError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("state {state:?}: decision {decision:?} targets undeclared state {target:?}")]
    DanglingTarget { state: String, decision: String, target: String },
    #[error("state {state:?}: unknown handler {handler:?}")]
    UnknownHandler { state: String, handler: String },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?}: no value for placeholder {placeholder:?}")]
    UnresolvedPlaceholder { template: String, placeholder: String },
    #[error("state {state:?} has no transition for decision {decision:?}")]
    DeadTransition { state: String, decision: String },
    #[error("handler {handler:?} failed in state {state:?}: {message}")]
    HandlerFailed { state: String, handler: String, message: String },
    #[error("handler result in state {state:?} is invalid: {message}")]
    InvalidResult { state: String, message: String },
    #[error("session is in terminal state {0:?}")]
    TerminalState(String),
    #[error("unknown state {0:?}")]
    UnknownState(String),
    #[error("event time {at} precedes last recorded time {last}")]
    TimeWentBackwards { last: u64, at: u64 },
    #[error("more than {0} consecutive auto steps")]
    AutoLoop(usize),
}
