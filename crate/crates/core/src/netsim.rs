//! A single sender on a bottleneck link, modeled as a fluid queue.
//!
//! Each step the sender adjusts its rate by one of three actions, pushes
//! `rate` packets into a FIFO of bounded size that drains `capacity` packets
//! per step, and observes throughput, latency and loss for that step.

use thiserror::Error;

use crate::shaping::{ActionOutOfRange, EnvStep, Environment};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetSimError {
    #[error("invalid link config: `{field}` {reason}")]
    InvalidConfig { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub throughput: f64,
    pub latency: f64,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkConfig {
    /// Packets drained per step.
    pub capacity: f64,
    /// Propagation latency in steps, before queueing.
    pub base_latency: f64,
    /// Queue size in packets; zero means excess arrivals drop immediately.
    pub queue_capacity: f64,
    /// Relative rate change of one increase or decrease, in (0, 1).
    pub delta_rate: f64,
    pub min_rate: f64,
    pub max_rate: f64,
    pub episode_length: usize,
    pub reward_weights: RewardWeights,
    /// Reserved for stochastic extensions; the dynamics are noise-free.
    pub rng_seed: u64,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            capacity: 10.0,
            base_latency: 4.0,
            queue_capacity: 20.0,
            delta_rate: 0.05,
            min_rate: 1.0,
            max_rate: 30.0,
            episode_length: 400,
            reward_weights: RewardWeights {
                throughput: 10.0,
                latency: 1.0,
                loss: 5.0,
            },
            rng_seed: 0,
        }
    }
}

impl LinkConfig {
    pub fn validate(&self) -> Result<(), NetSimError> {
        let bad = |field, reason: &str| {
            Err(NetSimError::InvalidConfig {
                field,
                reason: reason.to_owned(),
            })
        };
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.capacity) {
            return bad("capacity", "must be > 0");
        }
        if !positive(self.base_latency) {
            return bad("base_latency", "must be > 0");
        }
        if !(self.queue_capacity.is_finite() && self.queue_capacity >= 0.0) {
            return bad("queue_capacity", "must be >= 0");
        }
        if !(self.delta_rate > 0.0 && self.delta_rate < 1.0) {
            return bad("delta_rate", "must lie in (0, 1)");
        }
        if !positive(self.min_rate) {
            return bad("min_rate", "must be > 0");
        }
        if !(self.max_rate.is_finite() && self.max_rate > self.min_rate) {
            return bad("max_rate", "must be finite and > min_rate");
        }
        if self.episode_length == 0 {
            return bad("episode_length", "must be > 0");
        }
        let w = self.reward_weights;
        for (field, value) in [
            ("reward_weights.throughput", w.throughput),
            ("reward_weights.latency", w.latency),
            ("reward_weights.loss", w.loss),
        ] {
            if !(value.is_finite() && value >= 0.0) {
                return bad(field, "must be >= 0");
            }
        }
        Ok(())
    }

    pub fn initial_rate(&self) -> f64 {
        (self.min_rate + self.max_rate) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkState {
    pub rate: f64,
    pub queue: f64,
    pub step: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub throughput_ratio: f64,
    pub latency_ratio: f64,
    pub loss_rate: f64,
}

impl Observation {
    pub fn features(&self) -> [f64; 3] {
        [self.throughput_ratio, self.latency_ratio, self.loss_rate]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    IncreaseRate = 0,
    DecreaseRate = 1,
    KeepRate = 2,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::IncreaseRate, Action::DecreaseRate, Action::KeepRate];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Action> {
        Self::ALL.get(id).copied()
    }

    /// The event name the scenario model sees for this action.
    pub fn event_name(self) -> &'static str {
        match self {
            Action::IncreaseRate => "IncreaseRate",
            Action::DecreaseRate => "DecreaseRate",
            Action::KeepRate => "KeepRate",
        }
    }
}

/// Everything one step of the dynamics produces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: LinkState,
    pub observation: Observation,
    pub candidate_reward: f64,
    pub done: bool,
    pub delivered: f64,
    pub dropped: f64,
}

/// Initial state and the observation of the empty system.
pub fn reset(cfg: &LinkConfig) -> Result<(LinkState, Observation), NetSimError> {
    cfg.validate()?;
    let rate = cfg.initial_rate();
    let state = LinkState {
        rate,
        queue: 0.0,
        step: 0,
    };
    let observation = Observation {
        throughput_ratio: (rate / cfg.capacity).min(1.0),
        latency_ratio: 1.0,
        loss_rate: 0.0,
    };
    Ok((state, observation))
}

/// Applies `action` and one step of fluid queue dynamics.
pub fn step_dynamics(state: &LinkState, action: Action, cfg: &LinkConfig) -> Transition {
    let clamp = |r: f64| r.clamp(cfg.min_rate, cfg.max_rate);
    let rate = match action {
        Action::IncreaseRate => clamp(state.rate * (1.0 + cfg.delta_rate)),
        Action::DecreaseRate => clamp(state.rate * (1.0 - cfg.delta_rate)),
        Action::KeepRate => state.rate,
    };
    let raw = state.queue + rate - cfg.capacity;
    let dropped = (raw - cfg.queue_capacity).max(0.0);
    let queue = raw.clamp(0.0, cfg.queue_capacity);
    let delivered = rate - dropped;
    let latency = cfg.base_latency + queue / cfg.capacity;

    let observation = Observation {
        throughput_ratio: delivered / cfg.capacity,
        latency_ratio: latency / cfg.base_latency,
        loss_rate: dropped / rate,
    };
    let w = cfg.reward_weights;
    let candidate_reward = w.throughput * observation.throughput_ratio
        - w.latency * (latency - cfg.base_latency) / cfg.base_latency
        - w.loss * observation.loss_rate;
    Transition {
        state: LinkState {
            rate,
            queue,
            step: state.step + 1,
        },
        observation,
        candidate_reward,
        done: state.step + 1 == cfg.episode_length,
        delivered,
        dropped,
    }
}

/// [`step_dynamics`] behind the [`Environment`] interface.
#[derive(Debug, Clone)]
pub struct NetSimEnv {
    cfg: LinkConfig,
    state: LinkState,
}

impl NetSimEnv {
    pub fn new(cfg: LinkConfig) -> Result<Self, NetSimError> {
        let (state, _) = reset(&cfg)?;
        Ok(NetSimEnv { cfg, state })
    }

    pub fn config(&self) -> &LinkConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LinkState {
        &self.state
    }
}

impl Environment for NetSimEnv {
    type Observation = Observation;

    fn action_count(&self) -> usize {
        Action::ALL.len()
    }

    fn reset(&mut self) -> Observation {
        let (state, obs) = reset(&self.cfg).expect("config validated at construction");
        self.state = state;
        obs
    }

    fn step(&mut self, action: usize) -> Result<EnvStep<Observation>, ActionOutOfRange> {
        let action = Action::from_id(action).ok_or(ActionOutOfRange {
            action,
            count: Action::ALL.len(),
        })?;
        let t = step_dynamics(&self.state, action, &self.cfg);
        self.state = t.state;
        Ok(EnvStep {
            observation: t.observation,
            reward: t.candidate_reward,
            done: t.done,
        })
    }
}
