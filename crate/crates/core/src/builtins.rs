//! Ready-made scenarios: the parametric avoid-k-in-a-row monitor and the
//! water-tap trio.

use thiserror::Error;

use crate::event::{Event, EventSet};
use crate::program::{ScenarioProgram, SyncDeclaration};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BuiltinError {
    #[error("k must be at least 2, got {0}")]
    InvalidK(usize),
    #[error("`{0}` cannot be both the counted event and a reset event")]
    CountedEventResets(String),
    #[error("event names must be non-empty")]
    EmptyEventName,
}

/// A monitor that blocks `event` once it has occurred `k - 1` times in a row.
///
/// State `count{i}` records `i` consecutive occurrences. Every state waits for
/// `event` and the reset events; `event` moves the counter up (saturating at
/// `k - 1`) and any reset event returns it to zero. The saturated state blocks
/// `event`, so every further consecutive occurrence is blocked until a reset.
///
/// ```
/// use sbrl::{builtins::avoid_k_in_a_row, Event, Execution};
///
/// let monitor = avoid_k_in_a_row("IncreaseRate", 3, &["DecreaseRate", "KeepRate"]).unwrap();
/// let mut exec = Execution::new([monitor], 0);
/// let inc = Event::new("IncreaseRate");
/// assert!(!exec.handle_agent_action(&inc).unwrap());
/// assert!(!exec.handle_agent_action(&inc).unwrap());
/// assert!(exec.handle_agent_action(&inc).unwrap());
/// ```
pub fn avoid_k_in_a_row<S: AsRef<str>>(
    event: &str,
    k: usize,
    reset_events: &[S],
) -> Result<ScenarioProgram, BuiltinError> {
    if k < 2 {
        return Err(BuiltinError::InvalidK(k));
    }
    let counted = Event::try_new(event).ok_or(BuiltinError::EmptyEventName)?;
    let mut resets = Vec::with_capacity(reset_events.len());
    for r in reset_events {
        let r = Event::try_new(r.as_ref()).ok_or(BuiltinError::EmptyEventName)?;
        if r == counted {
            return Err(BuiltinError::CountedEventResets(event.to_owned()));
        }
        if !resets.contains(&r) {
            resets.push(r);
        }
    }

    let watched: EventSet = std::iter::once(counted.clone())
        .chain(resets.iter().cloned())
        .collect();
    let id = |i: usize| format!("count{i}");
    let mut b = ScenarioProgram::builder(format!("avoid_{k}_in_a_row_{event}"));
    for i in 0..k {
        let mut decl = SyncDeclaration::new().wait_for(watched.clone());
        if i == k - 1 {
            decl = decl.block(EventSet::of([counted.clone()]));
        }
        b = b.state(id(i), decl);
    }
    b = b.initial(id(0));
    for i in 0..k {
        b = b.on(id(i), counted.clone(), id((i + 1).min(k - 1)));
        for r in &resets {
            b = b.on(id(i), r.clone(), id(0));
        }
    }
    Ok(b.build().expect("avoid-k construction is well-formed"))
}

fn tap(name: &str, prefix: &str, add: &str) -> ScenarioProgram {
    let step = |i: usize| format!("{prefix}{i}");
    ScenarioProgram::builder(name)
        .state(
            "wait",
            SyncDeclaration::new().wait_for(EventSet::of(["WaterLow"])),
        )
        .state(step(1), SyncDeclaration::new().request([add]))
        .state(step(2), SyncDeclaration::new().request([add]))
        .state(step(3), SyncDeclaration::new().request([add]))
        .initial("wait")
        .on("wait", "WaterLow", step(1))
        .on(step(1), add, step(2))
        .on(step(2), add, step(3))
        .on(step(3), add, "wait")
        .build()
        .expect("water tap construction is well-formed")
}

/// `AddHotWater`, `AddColdWater` and `Stability`, in that order.
///
/// Both tap scenarios wait for `WaterLow` and then request their event three
/// times; `Stability` alternately blocks `AddCold` and `AddHot`.
pub fn water_tap_model() -> Vec<ScenarioProgram> {
    let stability = ScenarioProgram::builder("Stability")
        .state(
            "hot_turn",
            SyncDeclaration::new()
                .wait_for(EventSet::of(["AddHot"]))
                .block(EventSet::of(["AddCold"])),
        )
        .state(
            "cold_turn",
            SyncDeclaration::new()
                .wait_for(EventSet::of(["AddCold"]))
                .block(EventSet::of(["AddHot"])),
        )
        .initial("hot_turn")
        .on("hot_turn", "AddHot", "cold_turn")
        .on("cold_turn", "AddCold", "hot_turn")
        .build()
        .expect("stability construction is well-formed");
    vec![
        tap("AddHotWater", "hot", "AddHot"),
        tap("AddColdWater", "cold", "AddCold"),
        stability,
    ]
}

/// Requests `event` once and then terminates. Handy as a driver.
pub fn request_once(event: &str) -> ScenarioProgram {
    ScenarioProgram::builder(format!("request_once_{event}"))
        .state("pending", SyncDeclaration::new().request([event]))
        .state("done", SyncDeclaration::new())
        .initial("pending")
        .on("pending", event, "done")
        .build()
        .expect("driver construction is well-formed")
}
