//! Test oracles shared by the integration suites: a small reference
//! interpreter over plain data, a generator of random models for it, and a
//! brute-force scanner for the avoid-k rule.
#![allow(dead_code)]

use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

use sbrl::engine::TraceSource;
use sbrl::{Event, EventSet, Execution, ScenarioProgram, SelectionPolicy, StepOutcome, SyncDeclaration};

pub const EVENTS: [&str; 4] = ["a", "b", "c", "d"];
/// Never mentioned by generated models.
pub const STRANGER: &str = "z";

#[derive(Clone, Debug, PartialEq)]
pub enum RefSet {
    Mask(u8),
    All,
}

impl RefSet {
    fn has(&self, e: usize) -> bool {
        match self {
            RefSet::Mask(m) => m & (1 << e) != 0,
            RefSet::All => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefState {
    /// Event indices, distinct, in declaration order.
    pub request: Vec<usize>,
    pub wait: RefSet,
    pub block: RefSet,
    pub on: [Option<usize>; 4],
}

#[derive(Clone, Debug)]
pub struct RefScenario {
    pub states: Vec<RefState>,
    pub initial: usize,
}

#[derive(Clone, Debug)]
pub struct RefModel {
    pub scenarios: Vec<RefScenario>,
}

fn index_of(name: &str) -> Option<usize> {
    EVENTS.iter().position(|e| *e == name)
}

/// Brute-force interpreter: recomputes everything from scratch at each query.
#[derive(Clone, Debug)]
pub struct RefRun<'m> {
    model: &'m RefModel,
    pub at: Vec<usize>,
}

impl<'m> RefRun<'m> {
    pub fn new(model: &'m RefModel) -> Self {
        RefRun {
            model,
            at: model.scenarios.iter().map(|s| s.initial).collect(),
        }
    }

    fn state(&self, i: usize) -> &RefState {
        &self.model.scenarios[i].states[self.at[i]]
    }

    pub fn alive(&self, i: usize) -> bool {
        let s = self.state(i);
        !s.request.is_empty() || s.wait != RefSet::Mask(0)
    }

    pub fn blocked(&self, name: &str) -> bool {
        let Some(e) = index_of(name) else {
            return (0..self.at.len()).any(|i| self.alive(i) && self.state(i).block == RefSet::All);
        };
        (0..self.at.len()).any(|i| self.alive(i) && self.state(i).block.has(e))
    }

    pub fn enabled(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for i in 0..self.at.len() {
            if !self.alive(i) {
                continue;
            }
            for &e in &self.state(i).request {
                let name = EVENTS[e];
                if !self.blocked(name) && !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    pub fn fire(&mut self, name: &str) {
        let e = index_of(name);
        let mut next = self.at.clone();
        for (i, slot) in next.iter_mut().enumerate() {
            if !self.alive(i) {
                continue;
            }
            let s = self.state(i);
            let requested = e.is_some_and(|e| s.request.contains(&e));
            let waits = match e {
                Some(e) => s.wait.has(e),
                None => s.wait == RefSet::All,
            };
            if !(requested || waits) {
                continue;
            }
            *slot = match e.and_then(|e| s.on[e]) {
                Some(to) => to,
                None => {
                    assert_eq!(s.wait, RefSet::All, "generator left a wake-up without a target");
                    self.at[i]
                }
            };
        }
        self.at = next;
    }

    pub fn choose(&self, policy: &SelectionPolicy) -> Option<&'static str> {
        let enabled = self.enabled();
        let first = *enabled.first()?;
        Some(match policy {
            SelectionPolicy::Priority(p) => {
                let rank = |e: &str| p.get(e).copied().unwrap_or(0);
                let top = enabled.iter().map(|e| rank(e)).max().unwrap();
                *enabled.iter().find(|e| rank(e) == top).unwrap()
            }
            _ => first,
        })
    }
}

fn set(s: &RefSet) -> EventSet {
    match s {
        RefSet::All => EventSet::All,
        RefSet::Mask(m) => EventSet::of((0..4).filter(|e| m & (1 << e) != 0).map(|e| EVENTS[e])),
    }
}

pub fn to_programs(model: &RefModel) -> Vec<ScenarioProgram> {
    model
        .scenarios
        .iter()
        .enumerate()
        .map(|(n, sc)| {
            let id = |i: usize| format!("s{i}");
            let mut b = ScenarioProgram::builder(format!("sc{n}")).initial(id(sc.initial));
            for (i, st) in sc.states.iter().enumerate() {
                let decl = SyncDeclaration::new()
                    .request(st.request.iter().map(|&e| EVENTS[e]))
                    .wait_for(set(&st.wait))
                    .block(set(&st.block));
                b = b.state(id(i), decl);
                for (e, to) in st.on.iter().enumerate() {
                    if let Some(to) = to {
                        b = b.on(id(i), EVENTS[e], id(*to));
                    }
                }
            }
            b.build().expect("generated models are well formed")
        })
        .collect()
}

fn arb_set(all_one_in: u32) -> impl Strategy<Value = RefSet> {
    (0..all_one_in, 0u8..16).prop_map(|(r, m)| if r == 0 { RefSet::All } else { RefSet::Mask(m) })
}

fn arb_state(states: usize) -> impl Strategy<Value = RefState> {
    (
        0u8..16,
        0usize..4,
        arb_set(6),
        arb_set(8),
        proptest::array::uniform4(0..states),
        0u8..16,
    )
        .prop_map(|(req, rot, wait, block, targets, extra)| {
            let request: Vec<usize> = (0..4)
                .map(|i| (i + rot) % 4)
                .filter(|e| req & (1 << e) != 0)
                .collect();
            let mut on = [None; 4];
            for e in 0..4 {
                let needed = request.contains(&e) || matches!(wait, RefSet::Mask(m) if m & (1 << e) != 0);
                let optional = wait == RefSet::All && extra & (1 << e) != 0;
                if needed || optional {
                    on[e] = Some(targets[e]);
                }
            }
            RefState {
                request,
                wait,
                block,
                on,
            }
        })
}

fn arb_scenario() -> impl Strategy<Value = RefScenario> {
    (1usize..=4).prop_flat_map(|n| {
        (proptest::collection::vec(arb_state(n), n), 0..n)
            .prop_map(|(states, initial)| RefScenario { states, initial })
    })
}

/// Up to 3 scenarios of up to 4 states over 4 events.
pub fn arb_model() -> impl Strategy<Value = RefModel> {
    proptest::collection::vec(arb_scenario(), 1..=3).prop_map(|scenarios| RefModel { scenarios })
}

#[derive(Clone, Debug)]
pub enum Op {
    Step,
    Inject(&'static str),
}

pub fn arb_ops() -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        2 => Just(Op::Step),
        1 => proptest::sample::select(vec!["a", "b", "c", "d", STRANGER]).prop_map(Op::Inject),
    ];
    proptest::collection::vec(op, 0..=6)
}

pub fn arb_policy() -> impl Strategy<Value = SelectionPolicy> {
    prop_oneof![
        Just(SelectionPolicy::FirstEnabled),
        Just(SelectionPolicy::SeededRandom),
        proptest::array::uniform4(-2i64..3).prop_map(|p| {
            SelectionPolicy::Priority(
                EVENTS
                    .iter()
                    .zip(p)
                    .map(|(e, v)| (e.to_string(), v))
                    .collect::<BTreeMap<_, _>>(),
            )
        }),
    ]
}

fn names(events: &[Event]) -> Vec<String> {
    events.iter().map(|e| e.name().to_owned()).collect()
}

/// Engine and reference in lockstep. Checks enabled sets, blockedness of every
/// event, the chosen event, and the trace.
pub fn check_reference_equivalence(
    model: &RefModel,
    ops: &[Op],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut exec = Execution::new(to_programs(model), seed);
    let mut reference = RefRun::new(model);
    let mut expected: Vec<String> = Vec::new();
    for op in ops {
        prop_assert_eq!(names(&exec.enabled_events()), reference.enabled());
        for e in EVENTS.iter().chain([&STRANGER]) {
            prop_assert_eq!(exec.is_blocked(&Event::new(e)), reference.blocked(e), "blocked({})", e);
        }
        match op {
            Op::Step => {
                let outcome = exec.step(policy).map_err(|e| TestCaseError::fail(e.to_string()))?;
                match (outcome, reference.choose(policy)) {
                    (StepOutcome::Quiescent, None) => {}
                    (StepOutcome::Triggered(e), Some(r)) => {
                        prop_assert!(reference.enabled().contains(&e.name()));
                        if !matches!(policy, SelectionPolicy::SeededRandom) {
                            prop_assert_eq!(e.name(), r);
                        }
                        reference.fire(e.name());
                        expected.push(e.name().to_owned());
                    }
                    (got, want) => {
                        return Err(TestCaseError::fail(format!("engine {got:?}, reference {want:?}")))
                    }
                }
            }
            Op::Inject(e) => {
                exec.advance(&Event::new(e)).map_err(|e| TestCaseError::fail(e.to_string()))?;
                reference.fire(e);
                expected.push((*e).to_owned());
            }
        }
        let states: Vec<usize> = exec.snapshot().iter().map(|(s, _)| *s).collect();
        prop_assert_eq!(&states, &reference.at);
    }
    let trace: Vec<String> = exec.trace_events().map(|e| e.name().to_owned()).collect();
    prop_assert_eq!(trace, expected);
    Ok(())
}

/// Every selected event was requested by a live scenario and blocked by none
/// at the moment it fired.
pub fn check_selection_safety(
    model: &RefModel,
    ops: &[Op],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut exec = Execution::new(to_programs(model), seed);
    for op in ops {
        let before = exec.clone();
        match op {
            Op::Step => {
                if let StepOutcome::Triggered(e) = exec.step(policy).unwrap() {
                    let requested = model.scenarios.iter().enumerate().any(|(i, sc)| {
                        let (state, alive) = before.snapshot()[i];
                        alive && sc.states[state].request.iter().any(|&r| EVENTS[r] == e.name())
                    });
                    prop_assert!(requested, "{} fired without a live request", e);
                    prop_assert!(!before.is_blocked(&e), "{} fired while blocked", e);
                    let last = exec.trace().last().unwrap();
                    prop_assert_eq!(&last.event, &e);
                    prop_assert!(matches!(last.source, TraceSource::Selected(_)));
                }
            }
            Op::Inject(e) => exec.advance(&Event::new(e)).unwrap(),
        }
    }
    Ok(())
}

/// A blocked event is never enabled, whoever requests it.
pub fn check_blocking_dominance(model: &RefModel, ops: &[Op]) -> Result<(), TestCaseError> {
    let mut exec = Execution::new(to_programs(model), 0);
    let check = |exec: &Execution| -> Result<(), TestCaseError> {
        for e in exec.enabled_events() {
            prop_assert!(!exec.is_blocked(&e));
        }
        for name in EVENTS {
            let e = Event::new(name);
            if exec.is_blocked(&e) {
                prop_assert!(!exec.enabled_events().contains(&e));
            }
        }
        Ok(())
    };
    check(&exec)?;
    for op in ops {
        match op {
            Op::Step => {
                exec.step(&SelectionPolicy::FirstEnabled).unwrap();
            }
            Op::Inject(e) => exec.advance(&Event::new(e)).unwrap(),
        }
        check(&exec)?;
    }
    Ok(())
}

/// Once quiescent, stepping changes nothing until an event is injected.
pub fn check_quiescence_stability(
    model: &RefModel,
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<(), TestCaseError> {
    let mut exec = Execution::new(to_programs(model), seed);
    if exec.super_step(policy, 64).is_err() {
        return Ok(());
    }
    prop_assert!(exec.is_quiescent());
    let snapshot = exec.snapshot();
    let trace = exec.trace().len();
    for _ in 0..3 {
        prop_assert_eq!(exec.step(policy).unwrap(), StepOutcome::Quiescent);
        prop_assert_eq!(exec.super_step(policy, 64).unwrap(), 0);
    }
    prop_assert_eq!(exec.snapshot(), snapshot);
    prop_assert_eq!(exec.trace().len(), trace);
    Ok(())
}

/// Same programs, seed and inputs give the same trace.
pub fn check_determinism(
    model: &RefModel,
    ops: &[Op],
    policy: &SelectionPolicy,
    seed: u64,
) -> Result<(), TestCaseError> {
    let run = || {
        let mut exec = Execution::new(to_programs(model), seed);
        for op in ops {
            match op {
                Op::Step => {
                    exec.step(policy).unwrap();
                }
                Op::Inject(e) => exec.advance(&Event::new(e)).unwrap(),
            }
        }
        let _ = exec.super_step(policy, 16);
        exec.trace().to_vec()
    };
    prop_assert_eq!(run(), run());
    Ok(())
}

/// The event at `t` is blocked iff it is `target` and the `k - 1` events
/// before it were all `target` too.
pub fn scan_blocked<T: PartialEq>(history: &[T], t: usize, target: &T, k: usize) -> bool {
    t + 1 >= k && history[t + 1 - k..=t].iter().all(|e| e == target)
}

/// All sequences of `len` symbols drawn from `alphabet`, in lexicographic order.
pub fn all_sequences<T: Copy>(alphabet: &[T], len: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                alphabet.iter().map(move |&a| {
                    let mut p = prefix.clone();
                    p.push(a);
                    p
                })
            })
            .collect();
    }
    out
}
