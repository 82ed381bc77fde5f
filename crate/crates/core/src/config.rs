//! Flat `key=value` experiment configuration.
//!
//! One setting per line, `#` comments, dotted prefixes group related keys:
//!
//! ```text
//! link.capacity = 10
//! penalty.delta = 4.5
//! scenario.kind = avoid_k
//! training.seeds = 1, 2, 3, 4, 5
//! ```
//!
//! Every key has a default ([`ExperimentConfig::default`]); unknown keys are
//! rejected. [`ExperimentConfig::render`] writes the full set back out.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::engine::{SelectionPolicy, DEFAULT_MAX_STEPS};
use crate::netsim::{Action, LinkConfig};
use crate::shaping::PenaltyConfig;
use crate::trainer::{Discretizer, ViolationMonitor};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    InvalidValue {
        key: String,
        line: usize,
        reason: String,
    },
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("invalid config: `{key}` {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScenarioKind {
    /// The builtin avoid-k-in-a-row monitor.
    AvoidK,
    /// Scenarios loaded from an `.sbs` file.
    Dsl(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    /// Counted event for `avoid_k`.
    pub event: String,
    /// Run length that counts as a violation; also the `avoid_k` parameter.
    pub k: usize,
    pub reset_events: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub learning_rate: f64,
    pub gamma: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Fraction of all training steps over which epsilon decays.
    pub epsilon_decay_fraction: f64,
    /// Episodes in the final/moving window.
    pub window: usize,
    /// Convergence threshold as a fraction of the baseline's final-window mean.
    pub convergence_fraction: f64,
    pub eval_episodes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareThresholds {
    /// Required ratio of baseline to shaped violation frequency.
    pub min_reduction: f64,
    /// Required shaped/baseline ratio of final-window candidate reward.
    pub min_reward_retention: f64,
    /// Share of seeds in which shaped must converge no earlier than baseline.
    pub min_slower_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub link: LinkConfig,
    pub penalty: PenaltyConfig,
    pub scenario: ScenarioConfig,
    /// Event name for each action id.
    pub actions: Vec<String>,
    pub training: TrainingConfig,
    pub discretizer: Discretizer,
    pub policy: SelectionPolicy,
    pub max_steps: usize,
    pub compare: CompareThresholds,
    pub output: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            link: LinkConfig::default(),
            penalty: PenaltyConfig::default(),
            scenario: ScenarioConfig {
                kind: ScenarioKind::AvoidK,
                event: Action::IncreaseRate.event_name().to_owned(),
                k: 3,
                reset_events: vec![
                    Action::DecreaseRate.event_name().to_owned(),
                    Action::KeepRate.event_name().to_owned(),
                ],
            },
            actions: Action::ALL
                .iter()
                .map(|a| a.event_name().to_owned())
                .collect(),
            training: TrainingConfig {
                episodes: 2000,
                seeds: vec![1, 2, 3, 4, 5],
                learning_rate: 0.1,
                gamma: 0.95,
                epsilon_start: 1.0,
                epsilon_end: 0.05,
                epsilon_decay_fraction: 0.5,
                window: 20,
                convergence_fraction: 0.9,
                eval_episodes: 10,
            },
            discretizer: Discretizer::default().with_action_history(2, Action::ALL.len()),
            policy: SelectionPolicy::FirstEnabled,
            max_steps: DEFAULT_MAX_STEPS,
            compare: CompareThresholds {
                min_reduction: 10.0,
                min_reward_retention: 0.7,
                min_slower_share: 0.8,
            },
            output: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: Display,
{
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse_num(x.trim())).collect()
}

fn names(v: &str) -> Vec<String> {
    v.split(',')
        .map(|x| x.trim().to_owned())
        .filter(|x| !x.is_empty())
        .collect()
}

fn join<T: Display>(xs: &[T]) -> String {
    xs.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_owned(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        // DSL scenario paths are relative to the config file.
        if let ScenarioKind::Dsl(p) = &cfg.scenario.kind {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.scenario.kind = ScenarioKind::Dsl(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = ExperimentConfig::default();
        let mut scenario_file: Option<PathBuf> = None;
        let mut kind: Option<String> = None;
        let mut policy_name: Option<String> = None;
        let mut priorities: Option<String> = None;
        let mut penalty = (cfg.penalty.alpha(), cfg.penalty.delta());
        let mut edges = cfg.discretizer.edges().clone();
        let mut history = cfg.discretizer.action_history();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(ConfigError::Syntax { line });
            };
            let (key, value) = (key.trim(), value.trim());
            let invalid = |reason: String| ConfigError::InvalidValue {
                key: key.to_owned(),
                line,
                reason,
            };
            let t = &mut cfg.training;
            let l = &mut cfg.link;
            let r: Result<(), String> = match key {
                "link.capacity" => parse_num(value).map(|v| l.capacity = v),
                "link.base_latency" => parse_num(value).map(|v| l.base_latency = v),
                "link.queue_capacity" => parse_num(value).map(|v| l.queue_capacity = v),
                "link.delta_rate" => parse_num(value).map(|v| l.delta_rate = v),
                "link.min_rate" => parse_num(value).map(|v| l.min_rate = v),
                "link.max_rate" => parse_num(value).map(|v| l.max_rate = v),
                "link.episode_length" => parse_num(value).map(|v| l.episode_length = v),
                "link.reward_throughput" => parse_num(value).map(|v| l.reward_weights.throughput = v),
                "link.reward_latency" => parse_num(value).map(|v| l.reward_weights.latency = v),
                "link.reward_loss" => parse_num(value).map(|v| l.reward_weights.loss = v),
                "link.seed" => parse_num(value).map(|v| l.rng_seed = v),
                "penalty.alpha" => parse_num(value).map(|v| penalty.0 = v),
                "penalty.delta" => parse_num(value).map(|v| penalty.1 = v),
                "scenario.kind" => {
                    kind = Some(value.to_owned());
                    Ok(())
                }
                "scenario.file" => {
                    scenario_file = Some(PathBuf::from(value));
                    Ok(())
                }
                "scenario.event" => {
                    cfg.scenario.event = value.to_owned();
                    Ok(())
                }
                "scenario.k" => parse_num(value).map(|v| cfg.scenario.k = v),
                "scenario.reset_events" => {
                    cfg.scenario.reset_events = names(value);
                    Ok(())
                }
                "actions.events" => {
                    cfg.actions = names(value);
                    Ok(())
                }
                "training.episodes" => parse_num(value).map(|v| t.episodes = v),
                "training.seeds" => parse_list(value).map(|v| t.seeds = v),
                "training.learning_rate" => parse_num(value).map(|v| t.learning_rate = v),
                "training.gamma" => parse_num(value).map(|v| t.gamma = v),
                "training.epsilon_start" => parse_num(value).map(|v| t.epsilon_start = v),
                "training.epsilon_end" => parse_num(value).map(|v| t.epsilon_end = v),
                "training.epsilon_decay_fraction" => {
                    parse_num(value).map(|v| t.epsilon_decay_fraction = v)
                }
                "training.window" => parse_num(value).map(|v| t.window = v),
                "training.convergence_fraction" => {
                    parse_num(value).map(|v| t.convergence_fraction = v)
                }
                "training.eval_episodes" => parse_num(value).map(|v| t.eval_episodes = v),
                "discretizer.throughput_edges" => parse_list(value).map(|v| edges[0] = v),
                "discretizer.latency_edges" => parse_list(value).map(|v| edges[1] = v),
                "discretizer.loss_edges" => parse_list(value).map(|v| edges[2] = v),
                "discretizer.action_history" => parse_num(value).map(|v| history = v),
                "engine.policy" => {
                    policy_name = Some(value.to_owned());
                    Ok(())
                }
                "engine.priorities" => {
                    priorities = Some(value.to_owned());
                    Ok(())
                }
                "engine.max_steps" => parse_num(value).map(|v| cfg.max_steps = v),
                "compare.min_reduction" => parse_num(value).map(|v| cfg.compare.min_reduction = v),
                "compare.min_reward_retention" => {
                    parse_num(value).map(|v| cfg.compare.min_reward_retention = v)
                }
                "compare.min_slower_share" => {
                    parse_num(value).map(|v| cfg.compare.min_slower_share = v)
                }
                "output.dir" => {
                    cfg.output = PathBuf::from(value);
                    Ok(())
                }
                _ => {
                    return Err(ConfigError::UnknownKey {
                        key: key.to_owned(),
                        line,
                    })
                }
            };
            r.map_err(invalid)?;
        }

        cfg.scenario.kind = match kind.as_deref() {
            None | Some("avoid_k") => ScenarioKind::AvoidK,
            Some("dsl") => ScenarioKind::Dsl(scenario_file.ok_or_else(|| ConfigError::Invalid {
                key: "scenario.file".into(),
                reason: "is required when scenario.kind = dsl".into(),
            })?),
            Some(other) => {
                return Err(ConfigError::Invalid {
                    key: "scenario.kind".into(),
                    reason: format!("must be `avoid_k` or `dsl`, got `{other}`"),
                })
            }
        };
        cfg.policy = parse_policy(policy_name.as_deref().unwrap_or("first"), priorities.as_deref())
            .map_err(|reason| ConfigError::Invalid {
                key: "engine.policy".into(),
                reason,
            })?;
        cfg.penalty = PenaltyConfig::new(penalty.0, penalty.1).map_err(|e| ConfigError::Invalid {
            key: "penalty".into(),
            reason: e.to_string(),
        })?;
        let [tp, lat, loss] = edges;
        cfg.discretizer = Discretizer::new(tp, lat, loss)
            .map_err(|e| ConfigError::Invalid {
                key: "discretizer".into(),
                reason: e.to_string(),
            })?
            .with_action_history(history, cfg.actions.len());
        cfg.validate()?;
        Ok(cfg)
    }

    /// Cross-field checks that single-key parsing cannot make.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |key: &str, reason: &str| {
            Err(ConfigError::Invalid {
                key: key.to_owned(),
                reason: reason.to_owned(),
            })
        };
        if let Err(e) = self.link.validate() {
            return invalid("link", &e.to_string());
        }
        let t = &self.training;
        if t.episodes == 0 {
            return invalid("training.episodes", "must be > 0");
        }
        if t.seeds.is_empty() {
            return invalid("training.seeds", "needs at least one seed");
        }
        if t.window == 0 {
            return invalid("training.window", "must be > 0");
        }
        if !(0.0..=1.0).contains(&t.epsilon_decay_fraction) {
            return invalid("training.epsilon_decay_fraction", "must lie in [0, 1]");
        }
        if self.scenario.k < 2 {
            return invalid("scenario.k", "must be >= 2");
        }
        if self.actions.len() != Action::ALL.len() {
            return invalid("actions.events", "must name exactly three events");
        }
        if !self.actions.contains(&self.scenario.event) {
            return invalid("scenario.event", "must be one of actions.events");
        }
        if self.discretizer.action_history() > 6 {
            return invalid("discretizer.action_history", "must be <= 6");
        }
        if self.max_steps == 0 {
            return invalid("engine.max_steps", "must be > 0");
        }
        Ok(())
    }

    /// Action id whose repetition counts as a violation.
    pub fn monitor(&self) -> ViolationMonitor {
        ViolationMonitor {
            action: self
                .actions
                .iter()
                .position(|a| *a == self.scenario.event)
                .expect("validated"),
            k: self.scenario.k,
        }
    }

    /// Total steps over which epsilon decays.
    pub fn epsilon_decay_steps(&self) -> u64 {
        let total = self.training.episodes as f64 * self.link.episode_length as f64;
        (total * self.training.epsilon_decay_fraction).round() as u64
    }

    /// Every setting as `(key, value)`, in file order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let l = &self.link;
        let t = &self.training;
        let [tp, lat, loss] = self.discretizer.edges();
        let (kind, file) = match &self.scenario.kind {
            ScenarioKind::AvoidK => ("avoid_k".to_owned(), None),
            ScenarioKind::Dsl(p) => ("dsl".to_owned(), Some(p.display().to_string())),
        };
        let priorities = match &self.policy {
            SelectionPolicy::Priority(m) => Some(
                m.iter()
                    .map(|(k, v)| format!("{k}:{v}"))
                    .collect::<Vec<_>>()
                    .join(", "),
            ),
            _ => None,
        };
        let mut out: Vec<(&str, String)> = vec![
            ("link.capacity", l.capacity.to_string()),
            ("link.base_latency", l.base_latency.to_string()),
            ("link.queue_capacity", l.queue_capacity.to_string()),
            ("link.delta_rate", l.delta_rate.to_string()),
            ("link.min_rate", l.min_rate.to_string()),
            ("link.max_rate", l.max_rate.to_string()),
            ("link.episode_length", l.episode_length.to_string()),
            ("link.reward_throughput", l.reward_weights.throughput.to_string()),
            ("link.reward_latency", l.reward_weights.latency.to_string()),
            ("link.reward_loss", l.reward_weights.loss.to_string()),
            ("link.seed", l.rng_seed.to_string()),
            ("penalty.alpha", self.penalty.alpha().to_string()),
            ("penalty.delta", self.penalty.delta().to_string()),
            ("scenario.kind", kind),
        ];
        if let Some(f) = file {
            out.push(("scenario.file", f));
        }
        out.extend([
            ("scenario.event", self.scenario.event.clone()),
            ("scenario.k", self.scenario.k.to_string()),
            ("scenario.reset_events", self.scenario.reset_events.join(", ")),
            ("actions.events", self.actions.join(", ")),
            ("training.episodes", t.episodes.to_string()),
            ("training.seeds", join(&t.seeds)),
            ("training.learning_rate", t.learning_rate.to_string()),
            ("training.gamma", t.gamma.to_string()),
            ("training.epsilon_start", t.epsilon_start.to_string()),
            ("training.epsilon_end", t.epsilon_end.to_string()),
            ("training.epsilon_decay_fraction", t.epsilon_decay_fraction.to_string()),
            ("training.window", t.window.to_string()),
            ("training.convergence_fraction", t.convergence_fraction.to_string()),
            ("training.eval_episodes", t.eval_episodes.to_string()),
            ("discretizer.throughput_edges", join(tp)),
            ("discretizer.latency_edges", join(lat)),
            ("discretizer.loss_edges", join(loss)),
            (
                "discretizer.action_history",
                self.discretizer.action_history().to_string(),
            ),
            ("engine.policy", self.policy.label().to_owned()),
        ]);
        if let Some(p) = priorities {
            out.push(("engine.priorities", p));
        }
        out.extend([
            ("engine.max_steps", self.max_steps.to_string()),
            ("compare.min_reduction", self.compare.min_reduction.to_string()),
            ("compare.min_reward_retention", self.compare.min_reward_retention.to_string()),
            ("compare.min_slower_share", self.compare.min_slower_share.to_string()),
            ("output.dir", self.output.display().to_string()),
        ]);
        out.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
    }

    pub fn render(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// `first`, `random` or `priority`; priorities are `Event:int` pairs.
pub fn parse_policy(name: &str, priorities: Option<&str>) -> Result<SelectionPolicy, String> {
    match name {
        "first" => Ok(SelectionPolicy::FirstEnabled),
        "random" => Ok(SelectionPolicy::SeededRandom),
        "priority" => {
            let mut map = std::collections::BTreeMap::new();
            for item in names(priorities.unwrap_or("")) {
                let (event, value) = item
                    .split_once(':')
                    .or_else(|| item.split_once('='))
                    .ok_or_else(|| format!("priority `{item}` is not `Event:value`"))?;
                let value: i64 = value
                    .trim()
                    .parse()
                    .map_err(|e| format!("priority `{item}`: {e}"))?;
                map.insert(event.trim().to_owned(), value);
            }
            Ok(SelectionPolicy::Priority(map))
        }
        other => Err(format!("unknown policy `{other}` (expected first, random or priority)")),
    }
}
