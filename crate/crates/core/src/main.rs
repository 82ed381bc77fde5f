use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use sbrl::config::{parse_policy, ExperimentConfig};
use sbrl::dsl::{self, ScenarioSource};
use sbrl::engine::{self, EngineError, Execution, TraceSource};
use sbrl::experiment::{self, Mode};
use sbrl::Event;

/// Exit code for failed verdicts and exhausted step budgets.
const EXIT_FAILED: u8 = 1;
/// Exit code for unreadable or invalid input.
const EXIT_INVALID: u8 = 2;

#[derive(Parser)]
#[command(name = "sbrl", version, about = "Scenario-based reward shaping toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    First,
    Random,
    Priority,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Shaped,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Shaped => Mode::Shaped,
        }
    }
}

#[derive(clap::Args)]
struct ExperimentArgs {
    /// Experiment config file (key = value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed to run; repeat for several. Overrides training.seeds.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Output directory. Overrides output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute scenario files and print the triggered events, one per line.
    RunModel {
        /// `.sbs` scenario files, registered in the order given.
        files: Vec<PathBuf>,
        /// Event injected after the model goes quiescent; repeat for a sequence.
        #[arg(long = "inject")]
        inject: Vec<String>,
        #[arg(long, value_enum, default_value = "first")]
        policy: PolicyArg,
        /// `Event:value` priorities for `--policy priority`.
        #[arg(long = "priority")]
        priorities: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Step budget per super step (default: SBRL_MAX_STEPS or 10000).
        #[arg(long)]
        max_steps: Option<usize>,
        /// Print the full trace as CSV, injected events included.
        #[arg(long)]
        csv: bool,
    },
    /// Train one agent per seed and write its episode log.
    Train {
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Train baseline and shaped agents and check the comparison thresholds.
    Compare {
        #[command(flatten)]
        args: ExperimentArgs,
    },
    /// Train, then run the greedy policy without exploration.
    Eval {
        #[command(flatten)]
        args: ExperimentArgs,
        #[arg(long, value_enum, default_value = "shaped")]
        mode: ModeArg,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::RunModel {
            files,
            inject,
            policy,
            priorities,
            seed,
            max_steps,
            csv,
        } => run_model(files, inject, policy, priorities, seed, max_steps, csv),
        Command::Train { args, mode } => with_config(args, |cfg, out| {
            let rows = experiment::cmd_train(&cfg, mode.into(), &out)?;
            for r in rows {
                println!(
                    "seed {}: final mean reward {:.6}, violation frequency {:.6}",
                    r.seed, r.final_mean_reward, r.final_violation_frequency
                );
            }
            Ok(ExitCode::SUCCESS)
        }),
        Command::Compare { args } => with_config(args, |cfg, out| {
            let report = experiment::cmd_compare(&cfg, &out)?;
            print!("{}", report.render());
            Ok(if report.verdict.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED)
            })
        }),
        Command::Eval { args, mode } => with_config(args, |cfg, out| {
            for log in experiment::cmd_eval(&cfg, mode.into(), &out)? {
                let steps: usize = log.episodes.iter().map(|e| e.steps).sum();
                let violations: usize = log.episodes.iter().map(|e| e.violation_count).sum();
                println!("seed {}: {violations} violations in {steps} greedy steps", log.seed);
            }
            Ok(ExitCode::SUCCESS)
        }),
    }
}

fn with_config(
    args: ExperimentArgs,
    run: impl FnOnce(ExperimentConfig, PathBuf) -> Result<ExitCode, experiment::ExperimentError>,
) -> ExitCode {
    let mut cfg = match &args.config {
        Some(path) => match ExperimentConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return ExitCode::from(EXIT_INVALID);
            }
        },
        None => ExperimentConfig::default(),
    };
    if !args.seeds.is_empty() {
        cfg.training.seeds = args.seeds;
    }
    if std::env::var_os(engine::MAX_STEPS_ENV).is_some() {
        match engine::max_steps_from_env() {
            Ok(n) => cfg.max_steps = n,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INVALID);
            }
        }
    }
    let out = args.out.unwrap_or_else(|| cfg.output.clone());
    match run(cfg, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

fn run_model(
    files: Vec<PathBuf>,
    inject: Vec<String>,
    policy: PolicyArg,
    priorities: Vec<String>,
    seed: u64,
    max_steps: Option<usize>,
    csv: bool,
) -> ExitCode {
    let mut programs = Vec::new();
    let mut failed = false;
    for path in &files {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("{}: error: {e}", path.display());
                failed = true;
                continue;
            }
        };
        match dsl::parse_with_warnings(&ScenarioSource::new(text, path.display().to_string())) {
            Ok((ps, warnings)) => {
                warnings.iter().for_each(|w| eprintln!("{w}"));
                programs.extend(ps);
            }
            Err(diags) => {
                diags.iter().for_each(|d| eprintln!("{d}"));
                failed = true;
            }
        }
    }
    if failed {
        return ExitCode::from(EXIT_INVALID);
    }
    let name = match policy {
        PolicyArg::First => "first",
        PolicyArg::Random => "random",
        PolicyArg::Priority => "priority",
    };
    let policy = match parse_policy(name, Some(&priorities.join(","))) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let budget = match max_steps.map_or_else(engine::max_steps_from_env, Ok) {
        Ok(n) if n > 0 => n,
        Ok(_) => {
            eprintln!("error: --max-steps must be positive");
            return ExitCode::from(EXIT_INVALID);
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let mut injected = Vec::with_capacity(inject.len());
    for name in &inject {
        match Event::try_new(name) {
            Some(e) => injected.push(e),
            None => {
                eprintln!("error: --inject needs a non-empty event name");
                return ExitCode::from(EXIT_INVALID);
            }
        }
    }

    let mut exec = Execution::new(programs, seed);
    let result = drive(&mut exec, &policy, budget, &injected);

    let stdout = io::stdout();
    let mut out = stdout.lock();
    let written = if csv {
        exec.write_trace_csv(&mut out)
    } else {
        exec.trace()
            .iter()
            .filter(|t| matches!(t.source, TraceSource::Selected(_)))
            .try_for_each(|t| writeln!(out, "{}", t.event))
    };
    if let Err(e) = written.and_then(|_| out.flush()) {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_FAILED);
    }
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILED)
        }
    }
}

/// Opening super step, then one injection plus super step per event.
fn drive(
    exec: &mut Execution,
    policy: &sbrl::SelectionPolicy,
    budget: usize,
    injected: &[Event],
) -> Result<(), EngineError> {
    exec.super_step(policy, budget)?;
    for e in injected {
        exec.advance(e)?;
        exec.super_step(policy, budget)?;
    }
    Ok(())
}
