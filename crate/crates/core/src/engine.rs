//! Lockstep execution of scenario programs.
//!
//! An [`Execution`] parks every live scenario at a synchronization point,
//! computes the enabled events (requested by someone, blocked by no one),
//! lets a [`SelectionPolicy`] pick one, and wakes every scenario that
//! requested or waited for it. Two driving modes sit on top of that step:
//!
//! * [`Execution::run_to_completion`] loops until nothing is enabled.
//! * [`Execution::super_step`] does the same, after which the caller injects
//!   an external event with [`Execution::handle_agent_action`], which reports
//!   whether that event was blocked *before* advancing the scenarios on it.

use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::event::Event;
use crate::program::ScenarioProgram;

pub const DEFAULT_MAX_STEPS: usize = 10_000;

/// Environment variable that overrides [`DEFAULT_MAX_STEPS`].
pub const MAX_STEPS_ENV: &str = "SBRL_MAX_STEPS";

/// The step budget from `SBRL_MAX_STEPS`, falling back to the default when
/// unset. A value that is not a positive integer is an error.
pub fn max_steps_from_env() -> Result<usize, EngineError> {
    match std::env::var(MAX_STEPS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(EngineError::InvalidBudget(raw)),
        },
        Err(_) => Ok(DEFAULT_MAX_STEPS),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("scenario `{scenario}` in state `{state}` wakes on `{event}` but has no transition for it")]
    MissingTransition {
        scenario: String,
        state: String,
        event: String,
    },
    #[error("step budget of {max_steps} exhausted with events still enabled")]
    StepBudgetExceeded { max_steps: usize },
    #[error("invalid step budget `{0}`: expected a positive integer")]
    InvalidBudget(String),
}

/// How the next event is picked among the enabled ones.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum SelectionPolicy {
    /// First enabled event in declaration order, scenarios in registration order.
    #[default]
    FirstEnabled,
    /// Uniform over the enabled events, drawn from the execution's seeded rng.
    SeededRandom,
    /// Highest priority wins; unlisted events have priority 0 and ties fall
    /// back to first-enabled order.
    Priority(BTreeMap<String, i64>),
}

impl SelectionPolicy {
    pub fn label(&self) -> &'static str {
        match self {
            SelectionPolicy::FirstEnabled => "first",
            SelectionPolicy::SeededRandom => "random",
            SelectionPolicy::Priority(_) => "priority",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum StepOutcome {
    Triggered(Event),
    Quiescent,
}

/// Who put an event on the trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TraceSource {
    Selected(&'static str),
    Injected,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEntry {
    pub event: Event,
    pub source: TraceSource,
    /// Size of the enabled set at the moment the event was triggered.
    pub enabled: usize,
}

#[derive(Clone, Debug)]
struct Instance {
    program: Arc<ScenarioProgram>,
    state: usize,
    alive: bool,
}

impl Instance {
    fn start(program: Arc<ScenarioProgram>) -> Self {
        let state = program.initial();
        let alive = !program.declaration(state).is_terminal();
        Instance {
            program,
            state,
            alive,
        }
    }
}

/// A running set of scenarios plus the trace of everything triggered so far.
#[derive(Clone, Debug)]
pub struct Execution {
    scenarios: Vec<Instance>,
    trace: Vec<TraceEntry>,
    seed: u64,
    rng: ChaCha8Rng,
}

impl Execution {
    pub fn new<I>(programs: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = ScenarioProgram>,
    {
        Self::from_shared(programs.into_iter().map(Arc::new), seed)
    }

    pub fn from_shared<I>(programs: I, seed: u64) -> Self
    where
        I: IntoIterator<Item = Arc<ScenarioProgram>>,
    {
        Execution {
            scenarios: programs.into_iter().map(Instance::start).collect(),
            trace: Vec::new(),
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Returns every scenario to its initial state, clears the trace and reseeds.
    pub fn reset(&mut self) {
        for s in &mut self.scenarios {
            *s = Instance::start(Arc::clone(&s.program));
        }
        self.trace.clear();
        self.rng = ChaCha8Rng::seed_from_u64(self.seed);
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn scenario_count(&self) -> usize {
        self.scenarios.len()
    }

    /// `(state index, alive)` for each scenario in registration order.
    pub fn snapshot(&self) -> Vec<(usize, bool)> {
        self.scenarios.iter().map(|s| (s.state, s.alive)).collect()
    }

    /// Name of the current state of scenario `index`.
    pub fn state_id(&self, index: usize) -> &str {
        let s = &self.scenarios[index];
        s.program.states()[s.state].id()
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn trace_events(&self) -> impl Iterator<Item = &Event> + '_ {
        self.trace.iter().map(|t| &t.event)
    }

    fn alive(&self) -> impl Iterator<Item = &Instance> + '_ {
        self.scenarios.iter().filter(|s| s.alive)
    }

    /// Whether some live scenario currently blocks `event`.
    pub fn is_blocked(&self, event: &Event) -> bool {
        self.alive()
            .any(|s| s.program.declaration(s.state).blocked.contains(event))
    }

    /// Requested-and-unblocked events, deduplicated, in first-enabled order.
    pub fn enabled_events(&self) -> Vec<Event> {
        let mut out: Vec<Event> = Vec::new();
        for s in self.alive() {
            for e in &s.program.declaration(s.state).requested {
                if !out.contains(e) && !self.is_blocked(e) {
                    out.push(e.clone());
                }
            }
        }
        out
    }

    pub fn is_quiescent(&self) -> bool {
        self.enabled_events().is_empty()
    }

    /// Picks the next event without triggering it.
    pub fn select_event(&mut self, policy: &SelectionPolicy) -> StepOutcome {
        let enabled = self.enabled_events();
        match self.choose(&enabled, policy) {
            Some(i) => StepOutcome::Triggered(enabled[i].clone()),
            None => StepOutcome::Quiescent,
        }
    }

    fn choose(&mut self, enabled: &[Event], policy: &SelectionPolicy) -> Option<usize> {
        match enabled.len() {
            0 => None,
            1 => Some(0),
            n => Some(match policy {
                SelectionPolicy::FirstEnabled => 0,
                SelectionPolicy::SeededRandom => self.rng.random_range(0..n),
                SelectionPolicy::Priority(priorities) => {
                    let rank = |e: &Event| priorities.get(e.name()).copied().unwrap_or(0);
                    let mut best = 0;
                    for (i, e) in enabled.iter().enumerate().skip(1) {
                        if rank(e) > rank(&enabled[best]) {
                            best = i;
                        }
                    }
                    best
                }
            }),
        }
    }

    /// Triggers `event` from outside the selection loop. It need not be enabled.
    pub fn advance(&mut self, event: &Event) -> Result<(), EngineError> {
        let enabled = self.enabled_events().len();
        self.advance_as(event, TraceSource::Injected, enabled)
    }

    fn advance_as(
        &mut self,
        event: &Event,
        source: TraceSource,
        enabled: usize,
    ) -> Result<(), EngineError> {
        // Resolve every move before committing so a failure leaves the execution untouched.
        let mut moves = Vec::new();
        for (i, s) in self.scenarios.iter().enumerate() {
            if !s.alive || !s.program.declaration(s.state).wakes_on(event) {
                continue;
            }
            match s.program.next(s.state, event) {
                Some(to) => moves.push((i, to)),
                None => {
                    return Err(EngineError::MissingTransition {
                        scenario: s.program.name().to_owned(),
                        state: s.program.states()[s.state].id().to_owned(),
                        event: event.name().to_owned(),
                    })
                }
            }
        }
        for (i, to) in moves {
            let s = &mut self.scenarios[i];
            s.state = to;
            s.alive = !s.program.declaration(to).is_terminal();
        }
        self.trace.push(TraceEntry {
            event: event.clone(),
            source,
            enabled,
        });
        Ok(())
    }

    /// One select-and-advance step.
    pub fn step(&mut self, policy: &SelectionPolicy) -> Result<StepOutcome, EngineError> {
        let enabled = self.enabled_events();
        let Some(i) = self.choose(&enabled, policy) else {
            return Ok(StepOutcome::Quiescent);
        };
        let event = enabled[i].clone();
        self.advance_as(&event, TraceSource::Selected(policy.label()), enabled.len())?;
        Ok(StepOutcome::Triggered(event))
    }

    /// Selects and advances until quiescent. Returns the events triggered by
    /// this call; fails if `max_steps` events fire and something is still enabled.
    pub fn run_to_completion(
        &mut self,
        policy: &SelectionPolicy,
        max_steps: usize,
    ) -> Result<Vec<Event>, EngineError> {
        let start = self.trace.len();
        self.super_step(policy, max_steps)?;
        Ok(self.trace[start..].iter().map(|t| t.event.clone()).collect())
    }

    /// Runs the internal events to quiescence and returns how many fired.
    /// The model then waits for [`Execution::handle_agent_action`].
    pub fn super_step(
        &mut self,
        policy: &SelectionPolicy,
        max_steps: usize,
    ) -> Result<usize, EngineError> {
        let mut fired = 0;
        loop {
            if fired == max_steps {
                return if self.is_quiescent() {
                    Ok(fired)
                } else {
                    Err(EngineError::StepBudgetExceeded { max_steps })
                };
            }
            match self.step(policy)? {
                StepOutcome::Triggered(_) => fired += 1,
                StepOutcome::Quiescent => return Ok(fired),
            }
        }
    }

    /// Reports whether `action` is blocked in the current state, then advances
    /// on it regardless.
    pub fn handle_agent_action(&mut self, action: &Event) -> Result<bool, EngineError> {
        let blocked = self.is_blocked(action);
        self.advance(action)?;
        Ok(blocked)
    }

    /// Newline-delimited event names.
    pub fn write_trace<W: Write>(&self, mut out: W) -> io::Result<()> {
        for t in &self.trace {
            writeln!(out, "{}", t.event)?;
        }
        Ok(())
    }

    /// `step,event,policy,enabled` rows; injected events show `injected`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "step,event,policy,enabled")?;
        for (i, t) in self.trace.iter().enumerate() {
            let policy = match t.source {
                TraceSource::Selected(label) => label,
                TraceSource::Injected => "injected",
            };
            writeln!(out, "{},{},{},{}", i, t.event, policy, t.enabled)?;
        }
        Ok(())
    }
}
