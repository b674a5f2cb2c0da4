use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::Value;

use super::memory::{DialogMemory, InboundEvent};

/// Something a handler asks the engine to emit.
#[derive(Clone, Debug, PartialEq)]
pub enum Outbound {
    /// Render `template` and send it to the user.
    Say { template: String, substitutions: BTreeMap<String, String> },
    /// Structured instruction for the transport layer (e.g. a routing decision).
    Directive { kind: String, payload: Value },
}

impl Outbound {
    pub fn say(template: &str) -> Self {
        Outbound::Say { template: template.to_owned(), substitutions: BTreeMap::new() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HandlerResult {
    pub decision_key: String,
    pub slot_writes: BTreeMap<String, Value>,
    pub outbound: Vec<Outbound>,
}

impl HandlerResult {
    pub fn decision(key: &str) -> Self {
        HandlerResult { decision_key: key.to_owned(), ..Default::default() }
    }

    pub fn write(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.slot_writes.insert(key.to_owned(), value.into());
        self
    }

    pub fn say(mut self, out: Outbound) -> Self {
        self.outbound.push(out);
        self
    }

    pub(crate) fn validate(&self) -> Result<(), String> {
        if self.decision_key.is_empty() {
            return Err("empty decision key".into());
        }
        if let Some(k) = self.slot_writes.keys().find(|k| !is_identifier(k)) {
            return Err(format!("slot key {k:?} is not a valid identifier"));
        }
        Ok(())
    }
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Error raised inside a handler. The engine leaves the session untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct HandlerError(pub String);

impl fmt::Display for HandlerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for HandlerError {}

impl HandlerError {
    pub fn new(msg: impl Into<String>) -> Self {
        HandlerError(msg.into())
    }
}

/// What a handler gets to look at. `event` is `None` for auto states.
pub struct HandlerContext<'a> {
    pub memory: &'a DialogMemory,
    pub event: Option<&'a InboundEvent>,
    pub state: &'a str,
    pub params: &'a Value,
}

impl HandlerContext<'_> {
    pub fn user_text(&self) -> Option<&str> {
        match self.event {
            Some(InboundEvent::UserMessage { text }) => Some(text),
            _ => None,
        }
    }

    pub fn param_str(&self, key: &str) -> Option<&str> {
        self.params.get(key).and_then(Value::as_str)
    }

    pub fn param_u64(&self, key: &str) -> Option<u64> {
        self.params.get(key).and_then(Value::as_u64)
    }
}

pub trait Handler: Send + Sync {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError>;
}

impl<F> Handler for F
where
    F: Fn(&HandlerContext<'_>) -> Result<HandlerResult, HandlerError> + Send + Sync,
{
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        self(ctx)
    }
}

#[derive(Clone, Default)]
pub struct HandlerRegistry {
    handlers: BTreeMap<String, Arc<dyn Handler>>,
}

impl fmt::Debug for HandlerRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.handlers.keys()).finish()
    }
}

impl HandlerRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry preloaded with `open_session`, `form_fill`, `form_answer`
    /// and `emit`.
    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        r.register("open_session", OpenSession);
        r.register("form_fill", FormFill);
        r.register("form_answer", FormAnswer);
        r.register("emit", Emit);
        r
    }

    pub fn register(&mut self, name: &str, handler: impl Handler + 'static) -> &mut Self {
        self.handlers.insert(name.to_owned(), Arc::new(handler));
        self
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Handler>> {
        self.handlers.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.handlers.contains_key(name)
    }
}

/// Stores the session profile under `profile` and copies identity fields
/// into top-level slots. Decision `started`.
pub struct OpenSession;

impl Handler for OpenSession {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let Some(InboundEvent::SessionStart { profile, identity }) = ctx.event else {
            return Err(HandlerError::new("expected session_start"));
        };
        let mut out = HandlerResult::decision("started").write("profile", profile.clone());
        for (k, v) in identity {
            if !is_identifier(k) {
                return Err(HandlerError::new(format!("identity key {k:?} is not a valid identifier")));
            }
            out = out.write(k, v.clone());
        }
        Ok(out)
    }
}

fn is_missing(v: Option<&Value>) -> bool {
    match v {
        None | Some(Value::Null) => true,
        Some(Value::String(s)) => s.trim().is_empty(),
        _ => false,
    }
}

/// Generic form filling. `params.slots` lists required slots; the first
/// missing one is recorded in `pending_slot` and its `ask_<slot>` template
/// is emitted (decision `missing`). Decision `complete` once all are set.
pub struct FormFill;

impl Handler for FormFill {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let slots = ctx
            .params
            .get("slots")
            .and_then(Value::as_array)
            .ok_or_else(|| HandlerError::new("form_fill needs params.slots"))?;
        let prefix = ctx.param_str("ask_prefix").unwrap_or("ask_");
        for s in slots {
            let name = s.as_str().ok_or_else(|| HandlerError::new("form_fill slots must be strings"))?;
            if is_missing(ctx.memory.slot(name)) {
                return Ok(HandlerResult::decision("missing")
                    .write("pending_slot", name)
                    .say(Outbound::say(&format!("{prefix}{name}"))));
            }
        }
        Ok(HandlerResult::decision("complete").write("pending_slot", Value::Null))
    }
}

/// Stores the user's reply into the slot named by `pending_slot`.
/// Decisions `stored` or `empty`.
pub struct FormAnswer;

impl Handler for FormAnswer {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let text = ctx.user_text().ok_or_else(|| HandlerError::new("expected user_message"))?;
        let slot = ctx
            .memory
            .slot("pending_slot")
            .and_then(Value::as_str)
            .ok_or_else(|| HandlerError::new("no pending slot"))?;
        let answer = text.trim();
        if answer.is_empty() {
            return Ok(HandlerResult::decision("empty"));
        }
        Ok(HandlerResult::decision("stored").write(slot, answer))
    }
}

/// Emits `params.template` (if any) and returns `params.decision`
/// (default `ok`).
pub struct Emit;

impl Handler for Emit {
    fn handle(&self, ctx: &HandlerContext<'_>) -> Result<HandlerResult, HandlerError> {
        let mut out = HandlerResult::decision(ctx.param_str("decision").unwrap_or("ok"));
        if let Some(t) = ctx.param_str("template") {
            out = out.say(Outbound::say(t));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identifiers() {
        assert!(is_identifier("customer_name"));
        assert!(is_identifier("_x1"));
        assert!(!is_identifier("1x"));
        assert!(!is_identifier("a.b"));
        assert!(!is_identifier(""));
    }

    #[test]
    fn result_validation() {
        assert!(HandlerResult::decision("").validate().is_err());
        assert!(HandlerResult::decision("ok").write("bad key", 1).validate().is_err());
        assert!(HandlerResult::decision("ok").write("good", 1).validate().is_ok());
    }

    #[test]
    fn form_fill_asks_first_missing_slot() {
        let mut mem = DialogMemory::new("s", "collect");
        let params = serde_json::json!({ "slots": ["name", "email"] });
        let ctx = HandlerContext { memory: &mem, event: None, state: "collect", params: &params };
        let r = FormFill.handle(&ctx).unwrap();
        assert_eq!(r.decision_key, "missing");
        assert_eq!(r.outbound, vec![Outbound::say("ask_name")]);
        mem.slots.insert("name".into(), "Ana".into());
        mem.slots.insert("email".into(), "a@x".into());
        let ctx = HandlerContext { memory: &mem, event: None, state: "collect", params: &params };
        assert_eq!(FormFill.handle(&ctx).unwrap().decision_key, "complete");
    }
}
