pub mod builtins;
pub mod config;
pub mod dsl;
pub mod engine;
pub mod event;
pub mod experiment;
pub mod netsim;
pub mod program;
pub mod shaping;
pub mod trainer;

pub use engine::{Execution, SelectionPolicy, StepOutcome};
pub use event::{Event, EventSet};
pub use program::{ScenarioProgram, SyncDeclaration};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/dsl.md")]
    mod dsl {}
    #[doc = include_str!("../../../book/src/shaping.md")]
    mod shaping {}
    #[doc = include_str!("../../../book/src/netsim.md")]
    mod netsim {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
