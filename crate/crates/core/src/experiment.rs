//! Baseline-versus-shaped training runs and the CSV files they produce.
//!
//! Every number is written with six fractional digits and LF line endings,
//! so identical configs and seeds give byte-identical files.

use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::builtins::{avoid_k_in_a_row, BuiltinError};
use crate::config::{ExperimentConfig, ScenarioKind};
use crate::dsl::{self, Diagnostic, ScenarioSource};
use crate::netsim::{NetSimEnv, NetSimError};
use crate::program::ScenarioProgram;
use crate::shaping::{ActionMap, ShapingError};
use crate::trainer::{
    self, convergence_episode, EpsilonSchedule, QTable, ShapingSetup, TrainError, TrainLog,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
    #[error(transparent)]
    NetSim(#[from] NetSimError),
    #[error(transparent)]
    Builtin(#[from] BuiltinError),
    #[error("scenario file has errors:\n{}", render_diagnostics(.0))]
    Scenario(Vec<Diagnostic>),
    #[error("cannot read scenario file {path}: {source}")]
    ScenarioIo { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Output { path: PathBuf, source: io::Error },
}

fn render_diagnostics(d: &[Diagnostic]) -> String {
    d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Baseline,
    Shaped,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Shaped => "shaped",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The scenario model named by the config.
pub fn load_scenarios(cfg: &ExperimentConfig) -> Result<Vec<ScenarioProgram>, ExperimentError> {
    match &cfg.scenario.kind {
        ScenarioKind::AvoidK => Ok(vec![avoid_k_in_a_row(
            &cfg.scenario.event,
            cfg.scenario.k,
            &cfg.scenario.reset_events,
        )?]),
        ScenarioKind::Dsl(path) => {
            let text = fs::read_to_string(path).map_err(|source| ExperimentError::ScenarioIo {
                path: path.clone(),
                source,
            })?;
            dsl::parse_scenarios(&ScenarioSource::new(text, path.display().to_string()))
                .map_err(ExperimentError::Scenario)
        }
    }
}

pub fn shaping_setup(cfg: &ExperimentConfig) -> Result<ShapingSetup, ExperimentError> {
    Ok(ShapingSetup {
        scenarios: load_scenarios(cfg)?,
        action_map: ActionMap::from_names(&cfg.actions)?,
        penalty: cfg.penalty,
        policy: cfg.policy.clone(),
        max_steps: cfg.max_steps,
    })
}

pub fn fresh_q_table(cfg: &ExperimentConfig) -> Result<QTable, ExperimentError> {
    let t = &cfg.training;
    Ok(QTable::new(
        cfg.discretizer.cell_count(),
        cfg.actions.len(),
        t.learning_rate,
        t.gamma,
        EpsilonSchedule {
            start: t.epsilon_start,
            end: t.epsilon_end,
            decay_steps: cfg.epsilon_decay_steps(),
        },
    )?)
}

/// One full training run.
pub fn run_training(
    cfg: &ExperimentConfig,
    mode: Mode,
    seed: u64,
) -> Result<(QTable, TrainLog), ExperimentError> {
    let env = NetSimEnv::new(cfg.link.clone())?;
    let sbm = match mode {
        Mode::Baseline => None,
        Mode::Shaped => Some(shaping_setup(cfg)?),
    };
    let (q, mut log) = trainer::train(
        env,
        sbm,
        fresh_q_table(cfg)?,
        &cfg.discretizer,
        cfg.training.episodes,
        seed,
        cfg.monitor(),
    )?;
    log.config_echo = cfg.pairs();
    Ok((q, log))
}

/// Runs `job` for every item on its own thread and returns results in input order.
fn parallel<T, R, F>(items: Vec<T>, job: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync,
{
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .into_iter()
            .map(|item| {
                let job = &job;
                s.spawn(move || job(item))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("training thread panicked"))
            .collect()
    })
}

/// `mean - (1 - fraction) * |mean|`: `fraction * mean` for positive means.
pub fn convergence_threshold(final_mean: f64, fraction: f64) -> f64 {
    final_mean - (1.0 - fraction) * final_mean.abs()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub final_mean_reward: f64,
    pub final_violation_frequency: f64,
    pub convergence_episode: Option<usize>,
}

fn summarize(log: &TrainLog, window: usize, threshold: f64) -> SeedSummary {
    SeedSummary {
        seed: log.seed,
        final_mean_reward: log.final_mean_candidate_reward(window),
        final_violation_frequency: log.final_violation_frequency(window),
        convergence_episode: convergence_episode(log, window, threshold),
    }
}

fn fmt_convergence(c: Option<usize>) -> String {
    c.map_or_else(|| "not_converged".to_owned(), |e| e.to_string())
}

fn write_file(path: &Path, body: impl FnOnce(&mut Vec<u8>) -> io::Result<()>) -> Result<(), ExperimentError> {
    let mut buf = Vec::new();
    body(&mut buf).and_then(|_| fs::write(path, &buf)).map_err(|source| ExperimentError::Output {
        path: path.to_owned(),
        source,
    })
}

fn create_dir(dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Output {
        path: dir.to_owned(),
        source,
    })
}

pub fn write_summary(path: &Path, rows: &[SeedSummary]) -> Result<(), ExperimentError> {
    write_file(path, |out| {
        writeln!(out, "seed,final_mean_reward,final_violation_frequency,convergence_episode")?;
        for r in rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{}",
                r.seed,
                r.final_mean_reward,
                r.final_violation_frequency,
                fmt_convergence(r.convergence_episode)
            )?;
        }
        Ok(())
    })
}

fn write_logs(dir: &Path, logs: &[TrainLog]) -> Result<(), ExperimentError> {
    create_dir(dir)?;
    for log in logs {
        write_file(&dir.join(format!("seed_{}.csv", log.seed)), |out| log.write_csv(out))?;
    }
    Ok(())
}

fn train_all(cfg: &ExperimentConfig, mode: Mode) -> Result<Vec<TrainLog>, ExperimentError> {
    parallel(cfg.training.seeds.clone(), |seed| run_training(cfg, mode, seed).map(|(_, log)| log))
        .into_iter()
        .collect()
}

/// Trains one mode for every configured seed and writes `seed_<n>.csv` plus
/// `summary.csv` into `out`. Convergence is measured against each run's own
/// final-window mean.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    mode: Mode,
    out: &Path,
) -> Result<Vec<SeedSummary>, ExperimentError> {
    let logs = train_all(cfg, mode)?;
    write_logs(out, &logs)?;
    let t = &cfg.training;
    let rows: Vec<SeedSummary> = logs
        .iter()
        .map(|log| {
            let target = convergence_threshold(
                log.final_mean_candidate_reward(t.window),
                t.convergence_fraction,
            );
            summarize(log, t.window, target)
        })
        .collect();
    write_summary(&out.join("summary.csv"), &rows)?;
    Ok(rows)
}

/// Trains per seed, then evaluates the greedy policy; writes `eval_seed_<n>.csv`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    mode: Mode,
    out: &Path,
) -> Result<Vec<TrainLog>, ExperimentError> {
    create_dir(out)?;
    let results: Vec<Result<TrainLog, ExperimentError>> =
        parallel(cfg.training.seeds.clone(), |seed| {
            let (q, _) = run_training(cfg, mode, seed)?;
            let sbm = match mode {
                Mode::Baseline => None,
                Mode::Shaped => Some(shaping_setup(cfg)?),
            };
            let mut log = trainer::evaluate_greedy(
                &q,
                &cfg.discretizer,
                NetSimEnv::new(cfg.link.clone())?,
                sbm,
                cfg.training.eval_episodes.max(1),
                seed,
                cfg.monitor(),
            )?;
            log.config_echo = cfg.pairs();
            Ok(log)
        });
    let logs: Vec<TrainLog> = results.into_iter().collect::<Result<_, _>>()?;
    for log in &logs {
        write_file(&out.join(format!("eval_seed_{}.csv", log.seed)), |o| log.write_csv(o))?;
    }
    Ok(logs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub seed: u64,
    pub baseline: SeedSummary,
    pub shaped: SeedSummary,
}

impl CompareRow {
    /// Baseline over shaped violation frequency; infinite when shaped is zero.
    pub fn reduction_ratio(&self) -> Option<f64> {
        ratio(self.baseline.final_violation_frequency, self.shaped.final_violation_frequency)
    }

    /// Shaped converged no earlier than baseline. Shaped never converging counts.
    pub fn shaped_not_faster(&self) -> bool {
        match (self.baseline.convergence_episode, self.shaped.convergence_episode) {
            (Some(b), Some(s)) => s >= b,
            (_, None) => true,
            (None, Some(_)) => false,
        }
    }
}

fn ratio(baseline: f64, shaped: f64) -> Option<f64> {
    if shaped > 0.0 {
        Some(baseline / shaped)
    } else if baseline > 0.0 {
        Some(f64::INFINITY)
    } else {
        None
    }
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(x) if x.is_infinite() => "inf".to_owned(),
        Some(x) => format!("{x:.6}"),
        None => "undefined".to_owned(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    /// Too few episodes to fill the final window; nothing was evaluated.
    InsufficientData,
    Evaluated(Vec<Check>),
}

impl Verdict {
    pub fn passed(&self) -> bool {
        match self {
            Verdict::InsufficientData => true,
            Verdict::Evaluated(checks) => checks.iter().all(|c| c.passed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub baseline_violation_frequency: f64,
    pub shaped_violation_frequency: f64,
    pub baseline_mean_candidate_reward: f64,
    pub shaped_mean_candidate_reward: f64,
    pub verdict: Verdict,
}

impl CompareReport {
    pub fn reduction_ratio(&self) -> Option<f64> {
        ratio(self.baseline_violation_frequency, self.shaped_violation_frequency)
    }

    pub fn slower_count(&self) -> usize {
        self.rows.iter().filter(|r| r.shaped_not_faster()).count()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(
            out,
            "seed,baseline_violation_frequency,shaped_violation_frequency,reduction_ratio,\
             baseline_mean_candidate_reward,shaped_mean_candidate_reward,\
             baseline_convergence_episode,shaped_convergence_episode"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{:.6},{:.6},{},{:.6},{:.6},{},{}",
                r.seed,
                r.baseline.final_violation_frequency,
                r.shaped.final_violation_frequency,
                fmt_ratio(r.reduction_ratio()),
                r.baseline.final_mean_reward,
                r.shaped.final_mean_reward,
                fmt_convergence(r.baseline.convergence_episode),
                fmt_convergence(r.shaped.convergence_episode),
            )?;
        }
        writeln!(
            out,
            "all,{:.6},{:.6},{},{:.6},{:.6},-,{}/{}",
            self.baseline_violation_frequency,
            self.shaped_violation_frequency,
            fmt_ratio(self.reduction_ratio()),
            self.baseline_mean_candidate_reward,
            self.shaped_mean_candidate_reward,
            self.slower_count(),
            self.rows.len(),
        )
    }

    /// Human-readable summary, one line per check.
    pub fn render(&self) -> String {
        let mut s = format!(
            "violation frequency: baseline {:.6}, shaped {:.6} (ratio {})\n\
             mean candidate reward: baseline {:.6}, shaped {:.6}\n",
            self.baseline_violation_frequency,
            self.shaped_violation_frequency,
            fmt_ratio(self.reduction_ratio()),
            self.baseline_mean_candidate_reward,
            self.shaped_mean_candidate_reward,
        );
        match &self.verdict {
            Verdict::InsufficientData => {
                s.push_str("insufficient-data: fewer episodes than the final window; thresholds not evaluated\n")
            }
            Verdict::Evaluated(checks) => {
                for c in checks {
                    let tag = if c.passed { "PASS" } else { "FAIL" };
                    s.push_str(&format!("{tag} {}: {}\n", c.name, c.detail));
                }
            }
        }
        s
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Builds the report from finished runs, in seed order.
pub fn compare_logs(
    cfg: &ExperimentConfig,
    baseline: &[TrainLog],
    shaped: &[TrainLog],
) -> CompareReport {
    let t = &cfg.training;
    let rows: Vec<CompareRow> = baseline
        .iter()
        .zip(shaped)
        .map(|(b, s)| {
            let target = convergence_threshold(
                b.final_mean_candidate_reward(t.window),
                t.convergence_fraction,
            );
            CompareRow {
                seed: b.seed,
                baseline: summarize(b, t.window, target),
                shaped: summarize(s, t.window, target),
            }
        })
        .collect();
    let agg = |f: fn(&CompareRow) -> f64| mean(rows.iter().map(f));
    let mut report = CompareReport {
        baseline_violation_frequency: agg(|r| r.baseline.final_violation_frequency),
        shaped_violation_frequency: agg(|r| r.shaped.final_violation_frequency),
        baseline_mean_candidate_reward: agg(|r| r.baseline.final_mean_reward),
        shaped_mean_candidate_reward: agg(|r| r.shaped.final_mean_reward),
        rows,
        verdict: Verdict::InsufficientData,
    };
    if t.episodes >= t.window {
        report.verdict = Verdict::Evaluated(checks(cfg, &report));
    }
    report
}

fn checks(cfg: &ExperimentConfig, r: &CompareReport) -> Vec<Check> {
    let c = &cfg.compare;
    let (b, s) = (r.baseline_violation_frequency, r.shaped_violation_frequency);
    let n = r.rows.len();
    let needed = (c.min_slower_share * n as f64).ceil() as usize;
    let not_converged: Vec<String> = r
        .rows
        .iter()
        .filter(|row| row.shaped.convergence_episode.is_none())
        .map(|row| row.seed.to_string())
        .collect();
    vec![
        Check {
            name: "violation-reduction",
            passed: b > 0.0 && s * c.min_reduction <= b,
            detail: format!(
                "baseline {b:.6} > 0 and shaped {s:.6} <= baseline / {}",
                c.min_reduction
            ),
        },
        Check {
            name: "reward-retention",
            passed: r.shaped_mean_candidate_reward
                >= c.min_reward_retention * r.baseline_mean_candidate_reward,
            detail: format!(
                "shaped {:.6} >= {} x baseline {:.6}",
                r.shaped_mean_candidate_reward,
                c.min_reward_retention,
                r.baseline_mean_candidate_reward
            ),
        },
        Check {
            name: "slower-convergence",
            passed: r.slower_count() >= needed,
            detail: format!(
                "shaped converged no earlier than baseline in {}/{n} seeds (need {needed})",
                r.slower_count()
            ),
        },
        Check {
            name: "shaped-converged",
            passed: not_converged.is_empty(),
            detail: if not_converged.is_empty() {
                "every shaped run reached the convergence threshold".to_owned()
            } else {
                format!("not converged for seeds {}", not_converged.join(", "))
            },
        },
    ]
}

/// Runs both modes for every seed, writes `baseline/`, `shaped/` and
/// `compare.csv` under `out`, and returns the report.
pub fn cmd_compare(cfg: &ExperimentConfig, out: &Path) -> Result<CompareReport, ExperimentError> {
    let jobs: Vec<(Mode, u64)> = [Mode::Baseline, Mode::Shaped]
        .into_iter()
        .flat_map(|m| cfg.training.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let logs: Vec<TrainLog> = parallel(jobs, |(mode, seed)| {
        run_training(cfg, mode, seed).map(|(_, log)| log)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let (baseline, shaped) = logs.split_at(cfg.training.seeds.len());

    let report = compare_logs(cfg, baseline, shaped);
    for (mode, logs) in [(Mode::Baseline, baseline), (Mode::Shaped, shaped)] {
        let dir = out.join(mode.as_str());
        write_logs(&dir, logs)?;
        let rows: Vec<SeedSummary> = report
            .rows
            .iter()
            .map(|r| match mode {
                Mode::Baseline => r.baseline.clone(),
                Mode::Shaped => r.shaped.clone(),
            })
            .collect();
        write_summary(&dir.join("summary.csv"), &rows)?;
    }
    write_file(&out.join("compare.csv"), |o| report.write_csv(o))?;
    write_file(&out.join("config.txt"), |o| o.write_all(cfg.render().as_bytes()))?;
    Ok(report)
}
