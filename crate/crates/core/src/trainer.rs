//! Tabular Q-learning over discretized observations, plus the per-episode
//! metrics the experiments report.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{Execution, SelectionPolicy, DEFAULT_MAX_STEPS};
use crate::netsim::{self, Action};
use crate::program::ScenarioProgram;
use crate::shaping::{
    ActionMap, EnvStep, Environment, PenaltyConfig, ShapedEnv, ShapedStepResult, ShapingError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("{component} bin edges must be finite and strictly increasing")]
    InvalidEdges { component: &'static str },
    #[error("invalid hyperparameter `{name}`: {reason}")]
    InvalidHyperparameter { name: &'static str, reason: String },
    #[error("at least one episode is required")]
    NoEpisodes,
    #[error("violation monitor needs k >= 2 and a valid action, got k={k}, action={action}")]
    InvalidMonitor { k: usize, action: usize },
    #[error(transparent)]
    Shaping(#[from] ShapingError),
}

/// Observations the discretizer can bin.
pub trait Features {
    fn features(&self) -> [f64; 3];
}

impl Features for netsim::Observation {
    fn features(&self) -> [f64; 3] {
        netsim::Observation::features(self)
    }
}

/// Maps each of the three observation components to a bin by interior edges;
/// `n` edges give `n + 1` bins. Optionally the last few actions are folded
/// into the cell as well.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretizer {
    edges: [Vec<f64>; 3],
    history: usize,
    actions: usize,
}

const COMPONENTS: [&str; 3] = ["throughput", "latency", "loss"];

impl Discretizer {
    pub fn new(
        throughput: Vec<f64>,
        latency: Vec<f64>,
        loss: Vec<f64>,
    ) -> Result<Self, TrainError> {
        let edges = [throughput, latency, loss];
        for (component, e) in COMPONENTS.into_iter().zip(&edges) {
            let ok = e.iter().all(|x| x.is_finite()) && e.windows(2).all(|w| w[0] < w[1]);
            if !ok {
                return Err(TrainError::InvalidEdges { component });
            }
        }
        Ok(Discretizer {
            edges,
            history: 0,
            actions: 0,
        })
    }

    /// Everything lands in one cell.
    pub fn single_cell() -> Self {
        Discretizer {
            edges: [Vec::new(), Vec::new(), Vec::new()],
            history: 0,
            actions: 0,
        }
    }

    /// Also key cells on the last `length` actions out of `actions`. Slots
    /// before the first action of an episode get their own value.
    pub fn with_action_history(mut self, length: usize, actions: usize) -> Self {
        self.history = length;
        self.actions = if length == 0 { 0 } else { actions };
        self
    }

    pub fn action_history(&self) -> usize {
        self.history
    }

    pub fn edges(&self) -> &[Vec<f64>; 3] {
        &self.edges
    }

    pub fn bins(&self) -> [usize; 3] {
        [0, 1, 2].map(|i| self.edges[i].len() + 1)
    }

    pub fn cell_count(&self) -> usize {
        let slots = (self.actions + 1).pow(self.history as u32);
        self.bins().iter().product::<usize>() * slots
    }

    pub fn cell(&self, features: [f64; 3]) -> usize {
        let bins = self.bins();
        let mut cell = 0;
        for i in 0..3 {
            // NaN compares false against every edge and lands in bin 0.
            let b = self.edges[i].partition_point(|&e| e <= features[i]);
            cell = cell * bins[i] + b;
        }
        cell
    }

    /// Cell for `features` after `recent` actions, oldest first. Only the
    /// last `action_history()` entries count.
    pub fn cell_after(&self, features: [f64; 3], recent: &[usize]) -> usize {
        let mut cell = self.cell(features);
        let tail = &recent[recent.len().saturating_sub(self.history)..];
        for i in 0..self.history {
            let slot = match i.checked_sub(self.history - tail.len()) {
                Some(j) => tail[j].min(self.actions - 1) + 1,
                None => 0,
            };
            cell = cell * (self.actions + 1) + slot;
        }
        cell
    }
}

impl Default for Discretizer {
    /// 8 x 8 x 4 bins sized for the default link.
    fn default() -> Self {
        Discretizer::new(
            vec![0.5, 0.8, 0.95, 1.0, 1.05, 1.25, 1.6],
            vec![1.0001, 1.05, 1.1, 1.2, 1.3, 1.4, 1.4999],
            vec![1e-9, 0.1, 0.3],
        )
        .expect("default edges are increasing")
    }
}

/// Linear decay from `start` to `end` over `decay_steps` steps, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_steps: u64,
}

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        EpsilonSchedule {
            start: epsilon,
            end: epsilon,
            decay_steps: 0,
        }
    }

    pub fn at(&self, step: u64) -> f64 {
        if step >= self.decay_steps {
            return self.end;
        }
        let frac = step as f64 / self.decay_steps as f64;
        self.start + (self.end - self.start) * frac
    }
}

/// Action values per (cell, action). Entries start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    values: Vec<f64>,
    actions: usize,
    learning_rate: f64,
    gamma: f64,
    epsilon: EpsilonSchedule,
}

impl QTable {
    pub fn new(
        cells: usize,
        actions: usize,
        learning_rate: f64,
        gamma: f64,
        epsilon: EpsilonSchedule,
    ) -> Result<Self, TrainError> {
        let bad = |name, reason: &str| {
            Err(TrainError::InvalidHyperparameter {
                name,
                reason: reason.to_owned(),
            })
        };
        if cells == 0 || actions == 0 {
            return bad("cells", "table needs at least one cell and one action");
        }
        if !(learning_rate > 0.0 && learning_rate <= 1.0) {
            return bad("learning_rate", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&gamma) {
            return bad("gamma", "must lie in [0, 1]");
        }
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(epsilon.start) || !unit(epsilon.end) {
            return bad("epsilon", "start and end must lie in [0, 1]");
        }
        Ok(QTable {
            values: vec![0.0; cells * actions],
            actions,
            learning_rate,
            gamma,
            epsilon,
        })
    }

    pub fn cells(&self) -> usize {
        self.values.len() / self.actions
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    pub fn epsilon(&self) -> &EpsilonSchedule {
        &self.epsilon
    }

    pub fn get(&self, cell: usize, action: usize) -> f64 {
        self.values[cell * self.actions + action]
    }

    pub fn set(&mut self, cell: usize, action: usize, value: f64) {
        self.values[cell * self.actions + action] = value;
    }

    pub fn row(&self, cell: usize) -> &[f64] {
        &self.values[cell * self.actions..(cell + 1) * self.actions]
    }

    /// Highest-valued action; ties go to the lowest id.
    pub fn greedy(&self, cell: usize) -> usize {
        let row = self.row(cell);
        let mut best = 0;
        for (a, &v) in row.iter().enumerate().skip(1) {
            if v > row[best] {
                best = a;
            }
        }
        best
    }

    pub fn max_value(&self, cell: usize) -> f64 {
        self.row(cell)[self.greedy(cell)]
    }

    /// One Q-learning backup. `next` is `None` at the end of an episode.
    pub fn update(&mut self, cell: usize, action: usize, reward: f64, next: Option<usize>) {
        let bootstrap = next.map_or(0.0, |n| self.gamma * self.max_value(n));
        let i = cell * self.actions + action;
        self.values[i] += self.learning_rate * (reward + bootstrap - self.values[i]);
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&mut self, factor: f64) {
        self.values.iter_mut().for_each(|v| *v *= factor);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub index: usize,
    /// Sum of the rewards the agent learned from (shaped when a model is attached).
    pub total_reward: f64,
    /// Sum of the environment's own rewards.
    pub total_candidate_reward: f64,
    pub violation_count: usize,
    pub blocked_count: usize,
    pub steps: usize,
}

impl EpisodeRecord {
    pub fn violation_frequency(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.violation_count as f64 / self.steps as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub episodes: Vec<EpisodeRecord>,
    pub seed: u64,
    pub config_echo: Vec<(String, String)>,
}

pub const TRAIN_LOG_HEADER: &str =
    "episode,total_reward,total_candidate_reward,violations,blocked,steps";

impl TrainLog {
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{TRAIN_LOG_HEADER}")?;
        for e in &self.episodes {
            writeln!(
                out,
                "{},{:.6},{:.6},{},{},{}",
                e.index,
                e.total_reward,
                e.total_candidate_reward,
                e.violation_count,
                e.blocked_count,
                e.steps
            )?;
        }
        Ok(())
    }

    /// The last `window` episodes (fewer if the log is shorter).
    pub fn final_window(&self, window: usize) -> &[EpisodeRecord] {
        let n = self.episodes.len();
        &self.episodes[n.saturating_sub(window)..]
    }

    pub fn final_mean_candidate_reward(&self, window: usize) -> f64 {
        let w = self.final_window(window);
        if w.is_empty() {
            return 0.0;
        }
        w.iter().map(|e| e.total_candidate_reward).sum::<f64>() / w.len() as f64
    }

    /// Violations per step over the last `window` episodes.
    pub fn final_violation_frequency(&self, window: usize) -> f64 {
        let w = self.final_window(window);
        let steps: usize = w.iter().map(|e| e.steps).sum();
        if steps == 0 {
            return 0.0;
        }
        w.iter().map(|e| e.violation_count).sum::<usize>() as f64 / steps as f64
    }
}

/// `sum_k gamma^k * rewards[k]`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

/// Number of positions `t` where `items[t+1-k..=t]` all equal `target`.
pub fn count_runs<T: PartialEq>(items: &[T], target: &T, k: usize) -> usize {
    let mut run = 0;
    let mut count = 0;
    for x in items {
        if x == target {
            run += 1;
            if run >= k {
                count += 1;
            }
        } else {
            run = 0;
        }
    }
    count
}

/// Steps that are the k-th or later consecutive `IncreaseRate`.
pub fn count_violations(actions: &[Action], k: usize) -> usize {
    count_runs(actions, &Action::IncreaseRate, k)
}

/// Which action counts as a violation when repeated `k` times in a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViolationMonitor {
    pub action: usize,
    pub k: usize,
}

impl Default for ViolationMonitor {
    fn default() -> Self {
        ViolationMonitor {
            action: Action::IncreaseRate.id(),
            k: 3,
        }
    }
}

/// A scenario model plus how it is wired to the action space.
#[derive(Debug, Clone)]
pub struct ShapingSetup {
    pub scenarios: Vec<ScenarioProgram>,
    pub action_map: ActionMap,
    pub penalty: PenaltyConfig,
    pub policy: SelectionPolicy,
    pub max_steps: usize,
}

impl ShapingSetup {
    pub fn new(scenarios: Vec<ScenarioProgram>, action_map: ActionMap, penalty: PenaltyConfig) -> Self {
        ShapingSetup {
            scenarios,
            action_map,
            penalty,
            policy: SelectionPolicy::FirstEnabled,
            max_steps: DEFAULT_MAX_STEPS,
        }
    }
}

/// The environment as the learner sees it, with or without a model.
#[allow(clippy::large_enum_variant)]
enum Harness<E> {
    Bare(E),
    Shaped(ShapedEnv<E>),
}

impl<E: Environment> Harness<E> {
    fn build(env: E, sbm: Option<ShapingSetup>, seed: u64) -> Result<Self, TrainError> {
        Ok(match sbm {
            None => Harness::Bare(env),
            Some(s) => Harness::Shaped(
                ShapedEnv::new(env, Execution::new(s.scenarios, seed), s.action_map, s.penalty)?
                    .with_policy(s.policy)
                    .with_max_steps(s.max_steps),
            ),
        })
    }

    fn action_count(&self) -> usize {
        match self {
            Harness::Bare(e) => e.action_count(),
            Harness::Shaped(s) => s.env().action_count(),
        }
    }

    fn reset(&mut self) -> Result<E::Observation, TrainError> {
        Ok(match self {
            Harness::Bare(e) => e.reset(),
            Harness::Shaped(s) => s.reset()?,
        })
    }

    fn step(&mut self, action: usize) -> Result<ShapedStepResult<E::Observation>, TrainError> {
        Ok(match self {
            Harness::Bare(e) => {
                let EnvStep {
                    observation,
                    reward,
                    done,
                } = e.step(action).map_err(ShapingError::from)?;
                ShapedStepResult {
                    observation,
                    reward,
                    done,
                    blocked: false,
                    candidate_reward: reward,
                }
            }
            Harness::Shaped(s) => s.step(action)?,
        })
    }
}

/// Runs one episode, choosing actions with `choose(cell, step)` and handing
/// each transition to `learn(cell, action, reward, next_cell)`.
fn run_episode<E, C, L>(
    harness: &mut Harness<E>,
    discretizer: &Discretizer,
    monitor: ViolationMonitor,
    index: usize,
    mut choose: C,
    mut learn: L,
) -> Result<EpisodeRecord, TrainError>
where
    E: Environment,
    E::Observation: Features,
    C: FnMut(usize) -> Option<usize>,
    L: FnMut(usize, usize, f64, Option<usize>),
{
    let mut recent: Vec<usize> = Vec::with_capacity(discretizer.action_history() + 1);
    let mut cell = discretizer.cell_after(harness.reset()?.features(), &recent);
    let mut record = EpisodeRecord {
        index,
        total_reward: 0.0,
        total_candidate_reward: 0.0,
        violation_count: 0,
        blocked_count: 0,
        steps: 0,
    };
    let mut run = 0;
    while let Some(action) = choose(cell) {
        let r = harness.step(action)?;
        if discretizer.action_history() > 0 {
            if recent.len() == discretizer.action_history() {
                recent.remove(0);
            }
            recent.push(action);
        }
        let next = discretizer.cell_after(r.observation.features(), &recent);
        learn(cell, action, r.reward, (!r.done).then_some(next));

        record.steps += 1;
        record.total_reward += r.reward;
        record.total_candidate_reward += r.candidate_reward;
        record.blocked_count += usize::from(r.blocked);
        if action == monitor.action {
            run += 1;
            if run >= monitor.k {
                record.violation_count += 1;
            }
        } else {
            run = 0;
        }
        cell = next;
        if r.done {
            break;
        }
    }
    Ok(record)
}

fn check_monitor(monitor: ViolationMonitor, actions: usize) -> Result<(), TrainError> {
    if monitor.k < 2 || monitor.action >= actions {
        return Err(TrainError::InvalidMonitor {
            k: monitor.k,
            action: monitor.action,
        });
    }
    Ok(())
}

/// Epsilon-greedy Q-learning for `episodes` episodes. With a model attached
/// the agent learns from the shaped reward, otherwise from the candidate
/// reward. Deterministic for a given seed.
#[allow(clippy::too_many_arguments)]
pub fn train<E>(
    env: E,
    sbm: Option<ShapingSetup>,
    mut q: QTable,
    discretizer: &Discretizer,
    episodes: usize,
    seed: u64,
    monitor: ViolationMonitor,
) -> Result<(QTable, TrainLog), TrainError>
where
    E: Environment,
    E::Observation: Features,
{
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut harness = Harness::build(env, sbm, seed)?;
    let actions = harness.action_count();
    check_monitor(monitor, actions)?;
    if q.actions() != actions || q.cells() != discretizer.cell_count() {
        return Err(TrainError::InvalidHyperparameter {
            name: "q_table",
            reason: format!(
                "table is {}x{} but the problem is {}x{}",
                q.cells(),
                q.actions(),
                discretizer.cell_count(),
                actions
            ),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut global_step: u64 = 0;
    let mut log = TrainLog {
        episodes: Vec::with_capacity(episodes),
        seed,
        config_echo: Vec::new(),
    };
    for index in 0..episodes {
        let schedule = *q.epsilon();
        let record = {
            let q_cell = std::cell::RefCell::new(&mut q);
            run_episode(
                &mut harness,
                discretizer,
                monitor,
                index,
                |cell| {
                    let eps = schedule.at(global_step);
                    global_step += 1;
                    Some(if rng.random::<f64>() < eps {
                        rng.random_range(0..actions)
                    } else {
                        q_cell.borrow().greedy(cell)
                    })
                },
                |cell, action, reward, next| q_cell.borrow_mut().update(cell, action, reward, next),
            )?
        };
        log.episodes.push(record);
    }
    Ok((q, log))
}

/// Runs the greedy policy without learning.
pub fn evaluate_greedy<E>(
    q: &QTable,
    discretizer: &Discretizer,
    env: E,
    sbm: Option<ShapingSetup>,
    episodes: usize,
    seed: u64,
    monitor: ViolationMonitor,
) -> Result<TrainLog, TrainError>
where
    E: Environment,
    E::Observation: Features,
{
    if episodes == 0 {
        return Err(TrainError::NoEpisodes);
    }
    let mut harness = Harness::build(env, sbm, seed)?;
    check_monitor(monitor, harness.action_count())?;
    let mut log = TrainLog {
        episodes: Vec::with_capacity(episodes),
        seed,
        config_echo: Vec::new(),
    };
    for index in 0..episodes {
        let record = run_episode(
            &mut harness,
            discretizer,
            monitor,
            index,
            |cell| Some(q.greedy(cell)),
            |_, _, _, _| {},
        )?;
        log.episodes.push(record);
    }
    Ok(log)
}

/// Plays a fixed action sequence as one episode (stopping early if the
/// environment finishes first). No learning happens.
pub fn scripted_episode<E>(
    env: E,
    sbm: Option<ShapingSetup>,
    discretizer: &Discretizer,
    actions: &[usize],
    monitor: ViolationMonitor,
) -> Result<EpisodeRecord, TrainError>
where
    E: Environment,
    E::Observation: Features,
{
    let mut harness = Harness::build(env, sbm, 0)?;
    check_monitor(monitor, harness.action_count())?;
    let mut script = actions.iter().copied();
    run_episode(
        &mut harness,
        discretizer,
        monitor,
        0,
        |_| script.next(),
        |_, _, _, _| {},
    )
}

/// First episode index whose trailing `window`-episode mean candidate reward
/// reaches `threshold`, or `None` if it never does.
pub fn convergence_episode(log: &TrainLog, window: usize, threshold: f64) -> Option<usize> {
    assert!(window >= 1, "window must be at least 1");
    let rewards: Vec<f64> = log
        .episodes
        .iter()
        .map(|e| e.total_candidate_reward)
        .collect();
    if rewards.len() < window {
        return None;
    }
    let mut sum: f64 = rewards[..window].iter().sum();
    if sum / window as f64 >= threshold {
        return Some(window - 1);
    }
    for i in window..rewards.len() {
        sum += rewards[i] - rewards[i - window];
        if sum / window as f64 >= threshold {
            return Some(i);
        }
    }
    None
}
