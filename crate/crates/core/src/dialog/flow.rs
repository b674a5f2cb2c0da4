use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::handlers::HandlerRegistry;
use super::{DialogError, StateId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSpec {
    /// Registered handler name. Terminal states may omit it.
    #[serde(default)]
    pub handler: Option<String>,
    #[serde(default)]
    pub transitions: BTreeMap<String, StateId>,
    #[serde(default)]
    pub on_enter_template: Option<String>,
    /// Run the handler as soon as the state is entered instead of waiting
    /// for the next inbound event.
    #[serde(default)]
    pub auto: bool,
    /// Free-form handler configuration.
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlowDocument {
    initial_state: StateId,
    #[serde(default)]
    terminal_states: BTreeSet<StateId>,
    states: BTreeMap<StateId, StateSpec>,
}

/// A validated dialog automaton.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FlowDefinition {
    pub initial_state: StateId,
    pub terminal_states: BTreeSet<StateId>,
    pub states: BTreeMap<StateId, StateSpec>,
    #[serde(skip)]
    warnings: Vec<String>,
}

impl FlowDefinition {
    pub fn state(&self, id: &str) -> Option<&StateSpec> {
        self.states.get(id)
    }

    pub fn is_terminal(&self, id: &str) -> bool {
        self.terminal_states.contains(id)
    }

    /// Non-fatal findings from loading, such as unreachable states.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn template_ids(&self) -> impl Iterator<Item = &str> {
        self.states.values().filter_map(|s| s.on_enter_template.as_deref())
    }

    fn reachable(&self) -> BTreeSet<&str> {
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::from([self.initial_state.as_str()]);
        while let Some(s) = queue.pop_front() {
            if !seen.insert(s) {
                continue;
            }
            if let Some(spec) = self.states.get(s) {
                queue.extend(spec.transitions.values().map(String::as_str));
            }
        }
        seen
    }
}

/// Parses and validates a TOML flow document against `registry`.
///
/// ```toml
/// initial_state = "start"
/// terminal_states = ["end"]
///
/// [states.start]
/// handler = "emit"
/// transitions = { ok = "end" }
///
/// [states.end]
/// ```
pub fn load_flow(document: &str, registry: &HandlerRegistry) -> Result<FlowDefinition, DialogError> {
    let doc: FlowDocument = toml::from_str(document).map_err(|e| DialogError::Parse(e.to_string()))?;
    let flow = FlowDefinition {
        initial_state: doc.initial_state,
        terminal_states: doc.terminal_states,
        states: doc.states,
        warnings: Vec::new(),
    };
    validate(flow, registry)
}

fn validate(mut flow: FlowDefinition, registry: &HandlerRegistry) -> Result<FlowDefinition, DialogError> {
    if !flow.states.contains_key(&flow.initial_state) {
        return Err(DialogError::InvalidFlow(format!("initial state {:?} is not declared", flow.initial_state)));
    }
    for t in &flow.terminal_states {
        let Some(spec) = flow.states.get(t) else {
            return Err(DialogError::InvalidFlow(format!("terminal state {t:?} is not declared")));
        };
        if !spec.transitions.is_empty() {
            return Err(DialogError::InvalidFlow(format!("terminal state {t:?} has transitions")));
        }
        if spec.auto {
            return Err(DialogError::InvalidFlow(format!("terminal state {t:?} cannot be auto")));
        }
    }
    for (id, spec) in &flow.states {
        for (key, target) in &spec.transitions {
            if key.is_empty() {
                return Err(DialogError::InvalidFlow(format!("state {id:?} has an empty decision key")));
            }
            if !flow.states.contains_key(target) {
                return Err(DialogError::DanglingTarget {
                    state: id.clone(),
                    decision: key.clone(),
                    target: target.clone(),
                });
            }
        }
        match &spec.handler {
            Some(h) if !registry.contains(h) => {
                return Err(DialogError::UnknownHandler { state: id.clone(), handler: h.clone() });
            }
            None if !flow.terminal_states.contains(id) => {
                return Err(DialogError::InvalidFlow(format!("non-terminal state {id:?} has no handler")));
            }
            _ => {}
        }
        if !spec.params.is_object() {
            return Err(DialogError::InvalidFlow(format!("params of state {id:?} must be a table")));
        }
    }
    let reachable = flow.reachable();
    let unreachable: Vec<String> = flow.states.keys().filter(|s| !reachable.contains(s.as_str())).cloned().collect();
    for s in unreachable {
        log::warn!("flow state {s:?} is unreachable from {:?}", flow.initial_state);
        flow.warnings.push(format!("state {s:?} is unreachable"));
    }
    Ok(flow)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_STATES: &str = r#"
        initial_state = "start"
        terminal_states = ["end"]
        [states.start]
        handler = "emit"
        transitions = { ok = "end" }
        [states.end]
    "#;

    #[test]
    fn minimal_flow_loads() {
        let flow = load_flow(TWO_STATES, &HandlerRegistry::with_builtins()).unwrap();
        assert_eq!(flow.states.len(), 2);
        assert!(flow.warnings().is_empty());
    }

    #[test]
    fn dangling_target_is_rejected() {
        let doc = TWO_STATES.replace("ok = \"end\"", "ok = \"X\"");
        let err = load_flow(&doc, &HandlerRegistry::with_builtins()).unwrap_err();
        assert!(matches!(err, DialogError::DanglingTarget { ref target, .. } if target == "X"), "{err}");
    }

    #[test]
    fn unknown_handler_and_parse_errors() {
        let doc = TWO_STATES.replace("\"emit\"", "\"nope\"");
        assert!(matches!(load_flow(&doc, &HandlerRegistry::with_builtins()), Err(DialogError::UnknownHandler { .. })));
        assert!(matches!(load_flow("initial_state = ", &HandlerRegistry::with_builtins()), Err(DialogError::Parse(_))));
    }

    #[test]
    fn terminal_with_transitions_and_missing_initial() {
        let doc = TWO_STATES.replace("[states.end]", "[states.end]\ntransitions = { x = \"start\" }");
        assert!(matches!(load_flow(&doc, &HandlerRegistry::with_builtins()), Err(DialogError::InvalidFlow(_))));
        let doc = TWO_STATES.replace("initial_state = \"start\"", "initial_state = \"nowhere\"");
        assert!(matches!(load_flow(&doc, &HandlerRegistry::with_builtins()), Err(DialogError::InvalidFlow(_))));
    }

    #[test]
    fn unreachable_state_is_a_warning() {
        let doc = format!("{TWO_STATES}\n[states.island]\nhandler = \"emit\"\ntransitions = {{ ok = \"end\" }}\n");
        let flow = load_flow(&doc, &HandlerRegistry::with_builtins()).unwrap();
        assert_eq!(flow.warnings().len(), 1);
    }
}
