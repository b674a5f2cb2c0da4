use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::StateId;

/// An event arriving from outside the engine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InboundEvent {
    /// Opens a session. `profile` carries the user's tabular features;
    /// `identity` pre-fills form slots for users already identified.
    SessionStart {
        #[serde(default)]
        profile: Value,
        #[serde(default)]
        identity: BTreeMap<String, Value>,
    },
    UserMessage {
        text: String,
    },
}

/// An inbound event stamped with a logical or wall-clock time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub at: u64,
    #[serde(flatten)]
    pub inbound: InboundEvent,
}

impl Event {
    pub fn session_start(at: u64, profile: Value) -> Self {
        Event { at, inbound: InboundEvent::SessionStart { profile, identity: BTreeMap::new() } }
    }

    pub fn user_message(at: u64, text: &str) -> Self {
        Event { at, inbound: InboundEvent::UserMessage { text: text.to_owned() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryKind {
    Inbound { event: InboundEvent },
    Handler { state: StateId, handler: String, decision: String },
    BotMessage { template: String, text: String },
    Directive { directive: String, payload: Value },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub at: u64,
    #[serde(flatten)]
    pub kind: HistoryKind,
}

/// Per-session store: the automaton state, handler-written slots and an
/// append-only history with non-decreasing timestamps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogMemory {
    pub session_id: String,
    pub state: StateId,
    pub slots: BTreeMap<String, Value>,
    pub history: Vec<HistoryEntry>,
}

impl DialogMemory {
    pub fn new(session_id: &str, initial_state: &str) -> Self {
        DialogMemory {
            session_id: session_id.to_owned(),
            state: initial_state.to_owned(),
            slots: BTreeMap::new(),
            history: Vec::new(),
        }
    }

    pub fn slot(&self, key: &str) -> Option<&Value> {
        self.slots.get(key)
    }

    /// Looks up a dotted path (`profile.is_registered_agent`) through
    /// nested objects.
    pub fn lookup(&self, path: &str) -> Option<&Value> {
        let mut parts = path.split('.');
        let mut cur = self.slots.get(parts.next()?)?;
        for p in parts {
            cur = cur.as_object()?.get(p)?;
        }
        Some(cur)
    }

    pub fn last_timestamp(&self) -> Option<u64> {
        self.history.last().map(|h| h.at)
    }

    /// Inbound events in arrival order, with their timestamps.
    pub fn inbound_events(&self) -> impl Iterator<Item = Event> + '_ {
        self.history.iter().filter_map(|h| match &h.kind {
            HistoryKind::Inbound { event } => Some(Event { at: h.at, inbound: event.clone() }),
            _ => None,
        })
    }

    /// Canonical serialization (slots and maps are ordered).
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("memory serializes")
    }
}
