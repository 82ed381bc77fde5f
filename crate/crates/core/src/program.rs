//! Scenarios as explicit transition systems over synchronization points.

use thiserror::Error;

use crate::event::{Event, EventSet};

/// What a scenario declares while parked at a synchronization point.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct SyncDeclaration {
    pub requested: Vec<Event>,
    pub waited_for: EventSet,
    pub blocked: EventSet,
}

impl SyncDeclaration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn request<I, E>(mut self, events: I) -> Self
    where
        I: IntoIterator<Item = E>,
        E: Into<Event>,
    {
        for e in events {
            let e = e.into();
            if !self.requested.contains(&e) {
                self.requested.push(e);
            }
        }
        self
    }

    pub fn wait_for(mut self, events: EventSet) -> Self {
        self.waited_for = events;
        self
    }

    pub fn block(mut self, events: EventSet) -> Self {
        self.blocked = events;
        self
    }

    /// Nothing requested and nothing waited for: the scenario can never resume.
    pub fn is_terminal(&self) -> bool {
        self.requested.is_empty() && self.waited_for.is_empty()
    }

    /// Whether triggering `event` wakes a scenario parked on this declaration.
    pub fn wakes_on(&self, event: &Event) -> bool {
        self.requested.contains(event) || self.waited_for.contains(event)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct State {
    id: String,
    declaration: SyncDeclaration,
    transitions: Vec<(Event, usize)>,
}

impl State {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn declaration(&self) -> &SyncDeclaration {
        &self.declaration
    }

    /// Explicit transitions as `(event, target state index)`, in authoring order.
    pub fn transitions(&self) -> &[(Event, usize)] {
        &self.transitions
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProgramError {
    #[error("scenario name must be non-empty")]
    EmptyName,
    #[error("scenario `{scenario}`: duplicate state `{state}`")]
    DuplicateState { scenario: String, state: String },
    #[error("scenario `{scenario}`: no initial state")]
    MissingInitial { scenario: String },
    #[error("scenario `{scenario}`: unknown state `{state}`")]
    UnknownState { scenario: String, state: String },
    #[error("scenario `{scenario}`: state `{state}` has a transition on `{event}`, which it neither requests nor waits for")]
    UndeclaredTransition {
        scenario: String,
        state: String,
        event: String,
    },
    #[error("scenario `{scenario}`: state `{state}` declares `{event}` but has no transition for it")]
    MissingTransition {
        scenario: String,
        state: String,
        event: String,
    },
    #[error("scenario `{scenario}`: state `{state}` has more than one transition on `{event}`")]
    DuplicateTransition {
        scenario: String,
        state: String,
        event: String,
    },
}

/// A validated scenario. Construct through [`ScenarioProgram::builder`].
///
/// For every state, a transition exists on exactly the events it requests
/// or waits for. A state that waits for `*` may omit transitions; events
/// without one leave the scenario where it is.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioProgram {
    name: String,
    states: Vec<State>,
    initial: usize,
}

impl ScenarioProgram {
    pub fn builder(name: impl Into<String>) -> ProgramBuilder {
        ProgramBuilder {
            name: name.into(),
            states: Vec::new(),
            initial: None,
            transitions: Vec::new(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn initial(&self) -> usize {
        self.initial
    }

    pub fn state_index(&self, id: &str) -> Option<usize> {
        self.states.iter().position(|s| s.id == id)
    }

    pub fn declaration(&self, state: usize) -> &SyncDeclaration {
        &self.states[state].declaration
    }

    /// Successor of `state` on `event`, or `None` if the state does not wake on it.
    pub fn next(&self, state: usize, event: &Event) -> Option<usize> {
        let s = &self.states[state];
        if let Some((_, to)) = s.transitions.iter().find(|(e, _)| e == event) {
            return Some(*to);
        }
        if s.declaration.waited_for == EventSet::All {
            return Some(state);
        }
        None
    }

    /// Every event named anywhere in the program, in first-mention order.
    pub fn alphabet(&self) -> Vec<Event> {
        let mut out: Vec<Event> = Vec::new();
        let mut push = |e: &Event| {
            if !out.contains(e) {
                out.push(e.clone());
            }
        };
        for s in &self.states {
            s.declaration.requested.iter().for_each(&mut push);
            s.declaration.waited_for.explicit().iter().for_each(&mut push);
            s.declaration.blocked.explicit().iter().for_each(&mut push);
            s.transitions.iter().for_each(|(e, _)| push(e));
        }
        out
    }
}

pub struct ProgramBuilder {
    name: String,
    states: Vec<(String, SyncDeclaration)>,
    initial: Option<String>,
    transitions: Vec<(String, Event, String)>,
}

impl ProgramBuilder {
    pub fn state(mut self, id: impl Into<String>, declaration: SyncDeclaration) -> Self {
        self.states.push((id.into(), declaration));
        self
    }

    pub fn initial(mut self, id: impl Into<String>) -> Self {
        self.initial = Some(id.into());
        self
    }

    pub fn on(
        mut self,
        from: impl Into<String>,
        event: impl Into<Event>,
        to: impl Into<String>,
    ) -> Self {
        self.transitions.push((from.into(), event.into(), to.into()));
        self
    }

    pub fn build(self) -> Result<ScenarioProgram, ProgramError> {
        let scenario = self.name.clone();
        if scenario.is_empty() {
            return Err(ProgramError::EmptyName);
        }
        let mut states: Vec<State> = Vec::with_capacity(self.states.len());
        for (id, declaration) in self.states {
            if states.iter().any(|s| s.id == id) {
                return Err(ProgramError::DuplicateState {
                    scenario,
                    state: id,
                });
            }
            states.push(State {
                id,
                declaration,
                transitions: Vec::new(),
            });
        }
        let index = |id: &str| states.iter().position(|s| s.id == id);
        let initial_id = self
            .initial
            .ok_or_else(|| ProgramError::MissingInitial {
                scenario: scenario.clone(),
            })?;
        let initial = index(&initial_id).ok_or_else(|| ProgramError::UnknownState {
            scenario: scenario.clone(),
            state: initial_id.clone(),
        })?;

        let mut resolved = Vec::with_capacity(self.transitions.len());
        for (from, event, to) in self.transitions {
            let src = index(&from).ok_or_else(|| ProgramError::UnknownState {
                scenario: scenario.clone(),
                state: from.clone(),
            })?;
            let dst = index(&to).ok_or_else(|| ProgramError::UnknownState {
                scenario: scenario.clone(),
                state: to.clone(),
            })?;
            resolved.push((src, event, dst));
        }
        for (src, event, dst) in resolved {
            let state = &mut states[src];
            if !state.declaration.wakes_on(&event) {
                return Err(ProgramError::UndeclaredTransition {
                    scenario,
                    state: state.id.clone(),
                    event: event.name().to_owned(),
                });
            }
            if state.transitions.iter().any(|(e, _)| *e == event) {
                return Err(ProgramError::DuplicateTransition {
                    scenario,
                    state: state.id.clone(),
                    event: event.name().to_owned(),
                });
            }
            state.transitions.push((event, dst));
        }

        for state in &states {
            let d = &state.declaration;
            let declared = d.requested.iter().chain(d.waited_for.explicit());
            for event in declared {
                if !state.transitions.iter().any(|(e, _)| e == event) {
                    return Err(ProgramError::MissingTransition {
                        scenario,
                        state: state.id.clone(),
                        event: event.name().to_owned(),
                    });
                }
            }
        }

        Ok(ScenarioProgram {
            name: scenario,
            states,
            initial,
        })
    }
}
