//! Reward shaping driven by a scenario model.
//!
//! The agent's action goes to the environment, which produces a candidate
//! reward. The same action, mapped to an event, goes to the scenario model.
//! If the model blocked that event in the state it was in *before* the
//! action, the candidate reward `r` is replaced by `alpha * r - delta`. The
//! model then advances on the event either way and runs a super step so it
//! is quiescent again for the next action.

use thiserror::Error;

use crate::engine::{EngineError, Execution, SelectionPolicy, DEFAULT_MAX_STEPS};
use crate::event::Event;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("action {action} is outside 0..{count}")]
pub struct ActionOutOfRange {
    pub action: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep<O> {
    pub observation: O,
    pub reward: f64,
    pub done: bool,
}

/// A step-based environment with a discrete action space `0..action_count()`.
pub trait Environment {
    type Observation: Clone;

    fn action_count(&self) -> usize;

    fn reset(&mut self) -> Self::Observation;

    fn step(&mut self, action: usize) -> Result<EnvStep<Self::Observation>, ActionOutOfRange>;
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapingError {
    #[error("action {0} has no event in the action map")]
    UnknownAction(usize),
    #[error("event `{0}` is mapped to more than one action")]
    DuplicateEvent(String),
    #[error("action map covers {map} actions but the environment has {env}")]
    ActionSpaceMismatch { map: usize, env: usize },
    #[error("penalty alpha must lie in [-1, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("penalty delta must be finite and >= 0, got {0}")]
    InvalidDelta(f64),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Environment(#[from] ActionOutOfRange),
}

/// One-to-one mapping between action ids `0..n` and events.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMap {
    events: Vec<Event>,
}

impl ActionMap {
    /// `events[i]` is the event for action `i`.
    pub fn new(events: Vec<Event>) -> Result<Self, ShapingError> {
        for (i, e) in events.iter().enumerate() {
            if events[..i].contains(e) {
                return Err(ShapingError::DuplicateEvent(e.name().to_owned()));
            }
        }
        Ok(ActionMap { events })
    }

    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, ShapingError> {
        Self::new(names.iter().map(|n| Event::new(n.as_ref())).collect())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn event(&self, action: usize) -> Option<&Event> {
        self.events.get(action)
    }

    pub fn action(&self, event: &Event) -> Option<usize> {
        self.events.iter().position(|e| e == event)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }
}

/// `alpha` scales the candidate reward of a blocked action; `delta` is subtracted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    alpha: f64,
    delta: f64,
}

impl PenaltyConfig {
    pub fn new(alpha: f64, delta: f64) -> Result<Self, ShapingError> {
        if !(-1.0..=1.0).contains(&alpha) {
            return Err(ShapingError::InvalidAlpha(alpha));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(ShapingError::InvalidDelta(delta));
        }
        Ok(PenaltyConfig { alpha, delta })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

impl Default for PenaltyConfig {
    /// `alpha = 0`, `delta = 4.5`: a blocked action always earns -4.5.
    fn default() -> Self {
        PenaltyConfig {
            alpha: 0.0,
            delta: 4.5,
        }
    }
}

/// `alpha * candidate - delta` when blocked, `candidate` otherwise.
pub fn shape_reward(candidate: f64, blocked: bool, cfg: &PenaltyConfig) -> f64 {
    if blocked {
        cfg.alpha * candidate - cfg.delta
    } else {
        candidate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedStepResult<O> {
    pub observation: O,
    pub reward: f64,
    pub done: bool,
    pub blocked: bool,
    pub candidate_reward: f64,
}

/// One shaped step. `exec` must be quiescent on entry and is quiescent on return.
#[allow(clippy::too_many_arguments)]
pub fn shaped_step<E: Environment>(
    env: &mut E,
    exec: &mut Execution,
    action: usize,
    map: &ActionMap,
    cfg: &PenaltyConfig,
    policy: &SelectionPolicy,
    max_steps: usize,
) -> Result<ShapedStepResult<E::Observation>, ShapingError> {
    let event = map
        .event(action)
        .ok_or(ShapingError::UnknownAction(action))?;
    let EnvStep {
        observation,
        reward: candidate_reward,
        done,
    } = env.step(action)?;
    let blocked = exec.handle_agent_action(event)?;
    let reward = shape_reward(candidate_reward, blocked, cfg);
    exec.super_step(policy, max_steps)?;
    Ok(ShapedStepResult {
        observation,
        reward,
        done,
        blocked,
        candidate_reward,
    })
}

/// An environment paired with the scenario model that shapes its rewards.
#[derive(Debug, Clone)]
pub struct ShapedEnv<E> {
    env: E,
    exec: Execution,
    map: ActionMap,
    penalty: PenaltyConfig,
    policy: SelectionPolicy,
    max_steps: usize,
}

impl<E: Environment> ShapedEnv<E> {
    pub fn new(
        env: E,
        exec: Execution,
        map: ActionMap,
        penalty: PenaltyConfig,
    ) -> Result<Self, ShapingError> {
        if map.len() != env.action_count() {
            return Err(ShapingError::ActionSpaceMismatch {
                map: map.len(),
                env: env.action_count(),
            });
        }
        Ok(ShapedEnv {
            env,
            exec,
            map,
            penalty,
            policy: SelectionPolicy::FirstEnabled,
            max_steps: DEFAULT_MAX_STEPS,
        })
    }

    pub fn with_policy(mut self, policy: SelectionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn with_max_steps(mut self, max_steps: usize) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn env(&self) -> &E {
        &self.env
    }

    pub fn execution(&self) -> &Execution {
        &self.exec
    }

    pub fn action_map(&self) -> &ActionMap {
        &self.map
    }

    pub fn penalty(&self) -> &PenaltyConfig {
        &self.penalty
    }

    /// Resets both sides and runs the model's opening super step.
    pub fn reset(&mut self) -> Result<E::Observation, ShapingError> {
        let obs = self.env.reset();
        self.exec.reset();
        self.exec.super_step(&self.policy, self.max_steps)?;
        Ok(obs)
    }

    pub fn step(&mut self, action: usize) -> Result<ShapedStepResult<E::Observation>, ShapingError> {
        shaped_step(
            &mut self.env,
            &mut self.exec,
            action,
            &self.map,
            &self.penalty,
            &self.policy,
            self.max_steps,
        )
    }

    pub fn into_parts(self) -> (E, Execution) {
        (self.env, self.exec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::avoid_k_in_a_row;

    /// Counts steps; reward is a fixed value per action.
    #[derive(Clone, Debug)]
    struct Fixed {
        rewards: Vec<f64>,
        t: usize,
    }

    impl Environment for Fixed {
        type Observation = usize;

        fn action_count(&self) -> usize {
            self.rewards.len()
        }

        fn reset(&mut self) -> usize {
            self.t = 0;
            0
        }

        fn step(&mut self, action: usize) -> Result<EnvStep<usize>, ActionOutOfRange> {
            let reward = *self.rewards.get(action).ok_or(ActionOutOfRange {
                action,
                count: self.rewards.len(),
            })?;
            self.t += 1;
            Ok(EnvStep {
                observation: self.t,
                reward,
                done: self.t == 5,
            })
        }
    }

    fn rate_map() -> ActionMap {
        ActionMap::from_names(&["IncreaseRate", "DecreaseRate", "KeepRate"]).unwrap()
    }

    fn avoid3() -> Execution {
        Execution::new(
            [avoid_k_in_a_row("IncreaseRate", 3, &["DecreaseRate", "KeepRate"]).unwrap()],
            0,
        )
    }

    #[test]
    fn shape_reward_examples() {
        let default = PenaltyConfig::default();
        assert_eq!(shape_reward(2.0, true, &default), -4.5);
        assert_eq!(shape_reward(2.0, false, &default), 2.0);
        let identity = PenaltyConfig::new(1.0, 0.0).unwrap();
        assert_eq!(shape_reward(-3.0, true, &identity), -3.0);
    }

    #[test]
    fn penalty_bounds() {
        assert!(PenaltyConfig::new(1.5, 0.0).is_err());
        assert!(PenaltyConfig::new(-1.0, -0.1).is_err());
        assert!(PenaltyConfig::new(0.0, f64::NAN).is_err());
        assert!(PenaltyConfig::new(f64::NAN, 1.0).is_err());
        assert!(PenaltyConfig::new(-1.0, 0.0).is_ok());
    }

    #[test]
    fn action_map_is_bijective() {
        assert!(ActionMap::from_names(&["a", "b", "a"]).is_err());
        let m = rate_map();
        assert_eq!(m.action(&Event::new("KeepRate")), Some(2));
        assert_eq!(m.event(1), Some(&Event::new("DecreaseRate")));
        assert_eq!(m.event(3), None);
    }

    #[test]
    fn blocked_increase_is_penalized() {
        let mut env = ShapedEnv::new(
            Fixed {
                rewards: vec![1.0, 1.0, 1.0],
                t: 0,
            },
            avoid3(),
            rate_map(),
            PenaltyConfig::default(),
        )
        .unwrap();
        env.reset().unwrap();
        env.step(0).unwrap();
        env.step(0).unwrap();
        let mut decrease = env.clone();
        let r = env.step(0).unwrap();
        assert!(r.blocked);
        assert_eq!(r.candidate_reward, 1.0);
        assert_eq!(r.reward, 0.0 * 1.0 - 4.5);

        let r = decrease.step(1).unwrap();
        assert!(!r.blocked);
        assert_eq!(r.reward, 1.0);
    }

    #[test]
    fn empty_model_is_transparent() {
        let base = Fixed {
            rewards: vec![0.5, -2.0],
            t: 0,
        };
        let mut bare = base.clone();
        let mut shaped = ShapedEnv::new(
            base,
            Execution::new(Vec::new(), 0),
            ActionMap::from_names(&["a", "b"]).unwrap(),
            PenaltyConfig::default(),
        )
        .unwrap();
        assert_eq!(bare.reset(), shaped.reset().unwrap());
        for a in [0, 1, 1, 0, 1] {
            let b = bare.step(a).unwrap();
            let s = shaped.step(a).unwrap();
            assert!(!s.blocked);
            assert_eq!((b.observation, b.reward, b.done), (s.observation, s.reward, s.done));
        }
    }

    #[test]
    fn unknown_action_and_size_mismatch() {
        let env = Fixed {
            rewards: vec![1.0, 1.0, 1.0],
            t: 0,
        };
        let mut exec = avoid3();
        let err = shaped_step(
            &mut env.clone(),
            &mut exec,
            7,
            &rate_map(),
            &PenaltyConfig::default(),
            &SelectionPolicy::FirstEnabled,
            10,
        )
        .unwrap_err();
        assert_eq!(err, ShapingError::UnknownAction(7));
        let err = ShapedEnv::new(
            env,
            avoid3(),
            ActionMap::from_names(&["a"]).unwrap(),
            PenaltyConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, ShapingError::ActionSpaceMismatch { map: 1, env: 3 });
    }

    #[test]
    fn reset_restarts_the_model() {
        let mut env = ShapedEnv::new(
            Fixed {
                rewards: vec![1.0, 1.0, 1.0],
                t: 0,
            },
            avoid3(),
            rate_map(),
            PenaltyConfig::default(),
        )
        .unwrap();
        env.reset().unwrap();
        env.step(0).unwrap();
        env.step(0).unwrap();
        env.reset().unwrap();
        assert!(!env.step(0).unwrap().blocked);
        assert_eq!(env.execution().trace().len(), 1);
    }
}
