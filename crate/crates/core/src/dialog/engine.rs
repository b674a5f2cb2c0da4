use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::flow::FlowDefinition;
use super::handlers::{HandlerContext, HandlerRegistry, Outbound};
use super::memory::{DialogMemory, Event, HistoryEntry, HistoryKind, InboundEvent};
use super::template::{render_template, TemplateStore, VariantSelector};
use super::DialogError;

pub const DEFAULT_MAX_AUTO_STEPS: usize = 32;

/// An action produced by a step, in emission order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Message { template: String, text: String },
    Directive { kind: String, payload: Value },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub memory: DialogMemory,
    pub actions: Vec<Action>,
}

/// Runs sessions through a flow. Immutable and cheap to clone; share one
/// engine across threads.
#[derive(Clone, Debug)]
pub struct Engine {
    flow: Arc<FlowDefinition>,
    templates: Arc<TemplateStore>,
    registry: HandlerRegistry,
    seed: u64,
    max_auto_steps: usize,
}

impl Engine {
    /// Fails if the flow references a handler or `on_enter_template` the
    /// engine cannot resolve.
    pub fn new(flow: FlowDefinition, templates: TemplateStore, registry: HandlerRegistry) -> Result<Self, DialogError> {
        for (id, spec) in &flow.states {
            if let Some(h) = &spec.handler {
                if !registry.contains(h) {
                    return Err(DialogError::UnknownHandler { state: id.clone(), handler: h.clone() });
                }
            }
        }
        if let Some(t) = flow.template_ids().find(|t| !templates.contains(t)) {
            return Err(DialogError::UnknownTemplate(t.to_owned()));
        }
        Ok(Engine {
            flow: Arc::new(flow),
            templates: Arc::new(templates),
            registry,
            seed: 0,
            max_auto_steps: DEFAULT_MAX_AUTO_STEPS,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_max_auto_steps(mut self, n: usize) -> Self {
        self.max_auto_steps = n;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn flow(&self) -> &FlowDefinition {
        &self.flow
    }

    pub fn templates(&self) -> &TemplateStore {
        &self.templates
    }

    pub fn new_session(&self, session_id: &str) -> DialogMemory {
        DialogMemory::new(session_id, &self.flow.initial_state)
    }

    pub fn is_finished(&self, memory: &DialogMemory) -> bool {
        self.flow.is_terminal(&memory.state)
    }

    /// Records `event` and runs the current state's handler exactly once.
    /// On any error the input memory is untouched.
    pub fn step(&self, memory: &DialogMemory, event: &Event) -> Result<StepOutput, DialogError> {
        let mut mem = memory.clone();
        let mut actions = Vec::new();
        self.accept(&mut mem, event)?;
        self.run_state(&mut mem, Some(&event.inbound), event.at, &mut actions)?;
        Ok(StepOutput { memory: mem, actions })
    }

    /// [`Engine::step`], then keeps running auto states until the flow
    /// waits for input or reaches a terminal state.
    pub fn process(&self, memory: &DialogMemory, event: &Event) -> Result<StepOutput, DialogError> {
        let StepOutput { memory: mut mem, mut actions } = self.step(memory, event)?;
        let mut steps = 0;
        while self.flow.state(&mem.state).is_some_and(|s| s.auto) {
            if steps == self.max_auto_steps {
                return Err(DialogError::AutoLoop(self.max_auto_steps));
            }
            self.run_state(&mut mem, None, event.at, &mut actions)?;
            steps += 1;
        }
        Ok(StepOutput { memory: mem, actions })
    }

    /// Rebuilds a session by feeding `events` through [`Engine::process`]
    /// from a fresh memory.
    pub fn replay(
        &self,
        session_id: &str,
        events: impl IntoIterator<Item = Event>,
    ) -> Result<DialogMemory, DialogError> {
        let mut mem = self.new_session(session_id);
        for e in events {
            mem = self.process(&mem, &e)?.memory;
        }
        Ok(mem)
    }

    fn accept(&self, mem: &mut DialogMemory, event: &Event) -> Result<(), DialogError> {
        if self.flow.is_terminal(&mem.state) {
            return Err(DialogError::TerminalState(mem.state.clone()));
        }
        if let Some(last) = mem.last_timestamp() {
            if event.at < last {
                return Err(DialogError::TimeWentBackwards { last, at: event.at });
            }
        }
        mem.history.push(HistoryEntry { at: event.at, kind: HistoryKind::Inbound { event: event.inbound.clone() } });
        Ok(())
    }

    fn run_state(
        &self,
        mem: &mut DialogMemory,
        event: Option<&InboundEvent>,
        at: u64,
        actions: &mut Vec<Action>,
    ) -> Result<(), DialogError> {
        let state = mem.state.clone();
        let spec = self.flow.state(&state).ok_or_else(|| DialogError::UnknownState(state.clone()))?;
        if self.flow.is_terminal(&state) {
            return Err(DialogError::TerminalState(state));
        }
        let handler_name = spec.handler.as_deref().ok_or_else(|| DialogError::UnknownState(state.clone()))?;
        let handler = self
            .registry
            .get(handler_name)
            .ok_or_else(|| DialogError::UnknownHandler { state: state.clone(), handler: handler_name.to_owned() })?;
        let ctx = HandlerContext { memory: mem, event, state: &state, params: &spec.params };
        let result = handler.handle(&ctx).map_err(|e| DialogError::HandlerFailed {
            state: state.clone(),
            handler: handler_name.to_owned(),
            message: e.0,
        })?;
        result.validate().map_err(|message| DialogError::InvalidResult { state: state.clone(), message })?;
        let next = spec.transitions.get(&result.decision_key).ok_or_else(|| DialogError::DeadTransition {
            state: state.clone(),
            decision: result.decision_key.clone(),
        })?;

        mem.slots.extend(result.slot_writes);
        mem.history.push(HistoryEntry {
            at,
            kind: HistoryKind::Handler {
                state: state.clone(),
                handler: handler_name.to_owned(),
                decision: result.decision_key,
            },
        });
        for out in result.outbound {
            match out {
                Outbound::Say { template, substitutions } => self.say(mem, &template, substitutions, at, actions)?,
                Outbound::Directive { kind, payload } => {
                    mem.history.push(HistoryEntry {
                        at,
                        kind: HistoryKind::Directive { directive: kind.clone(), payload: payload.clone() },
                    });
                    actions.push(Action::Directive { kind, payload });
                }
            }
        }
        mem.state = next.clone();
        if let Some(t) = &self.flow.states[next].on_enter_template {
            self.say(mem, t, BTreeMap::new(), at, actions)?;
        }
        Ok(())
    }

    fn say(
        &self,
        mem: &mut DialogMemory,
        template: &str,
        substitutions: BTreeMap<String, String>,
        at: u64,
        actions: &mut Vec<Action>,
    ) -> Result<(), DialogError> {
        let mut subs = scalar_slots(mem);
        subs.extend(substitutions);
        let selector = VariantSelector { seed: variant_seed(self.seed, &mem.session_id, mem.history.len()) };
        let text = render_template(&self.templates, template, &subs, selector)?;
        mem.history.push(HistoryEntry {
            at,
            kind: HistoryKind::BotMessage { template: template.to_owned(), text: text.clone() },
        });
        actions.push(Action::Message { template: template.to_owned(), text });
        Ok(())
    }
}

fn scalar_slots(mem: &DialogMemory) -> BTreeMap<String, String> {
    mem.slots
        .iter()
        .filter_map(|(k, v)| match v {
            Value::String(s) => Some((k.clone(), s.clone())),
            Value::Number(n) => Some((k.clone(), n.to_string())),
            Value::Bool(b) => Some((k.clone(), b.to_string())),
            _ => None,
        })
        .collect()
}

fn fnv1a(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

fn variant_seed(seed: u64, session: &str, position: usize) -> u64 {
    let mut z = seed ^ fnv1a(session).rotate_left(17) ^ (position as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
