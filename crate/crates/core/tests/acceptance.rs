//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Run with `cargo test --test acceptance`.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use sbrl::builtins::{avoid_k_in_a_row, water_tap_model};
use sbrl::config::ExperimentConfig;
use sbrl::experiment::{cmd_compare, CompareReport, Verdict};
use sbrl::netsim::{LinkConfig, NetSimEnv};
use sbrl::shaping::{shape_reward, ActionMap, Environment, PenaltyConfig, ShapedEnv};
use sbrl::{Event, Execution, SelectionPolicy};

/// Reward comparisons in the penalty grid.
const REWARD_TOL: f64 = 1e-12;
const GOLDEN_BUDGET: Duration = Duration::from_secs(1);
const AVOID_K_BUDGET: Duration = Duration::from_secs(10);
const PROPERTY_BUDGET: Duration = Duration::from_secs(60);
const EXPERIMENT_BUDGET: Duration = Duration::from_secs(600);
const PROPERTY_CASES: u32 = 1000;
const MIN_REDUCTION: f64 = 10.0;
const MIN_RETENTION: f64 = 0.7;
const MIN_SLOWER_SEEDS: usize = 4;
const NON_INTERFERENCE_STEPS: usize = 1000;

type Property = dyn Fn(&RefModel, &[Op], &SelectionPolicy, u64) -> Result<(), TestCaseError>;

struct Gate {
    failed: usize,
}

impl Gate {
    fn report(&mut self, id: u32, name: &str, result: Result<String, String>) {
        match result {
            Ok(detail) => println!("PASS [{id}] {name}: {detail}"),
            Err(detail) => {
                self.failed += 1;
                println!("FAIL [{id}] {name}: {detail}");
            }
        }
    }
}

fn within(elapsed: Duration, budget: Duration) -> Result<(), String> {
    if elapsed < budget {
        Ok(())
    } else {
        Err(format!("took {elapsed:?}, budget {budget:?}"))
    }
}

fn golden_trace() -> Result<String, String> {
    let expected = ["AddHot", "AddCold", "AddHot", "AddCold", "AddHot", "AddCold"];
    let priority = SelectionPolicy::Priority([("AddCold".to_owned(), 5)].into_iter().collect());
    let policies = [SelectionPolicy::FirstEnabled, SelectionPolicy::SeededRandom, priority];
    let start = Instant::now();
    let mut runs = 0;
    for policy in &policies {
        for seed in [0, 1, 2, 42, 2024] {
            let mut exec = Execution::new(water_tap_model(), seed);
            exec.super_step(policy, 100).map_err(|e| e.to_string())?;
            exec.advance(&Event::new("WaterLow")).map_err(|e| e.to_string())?;
            let got = exec.run_to_completion(policy, 100).map_err(|e| e.to_string())?;
            let names: Vec<&str> = got.iter().map(Event::name).collect();
            if names != expected {
                return Err(format!("{} seed {seed}: {names:?}", policy.label()));
            }
            if !exec.is_quiescent() {
                return Err(format!("{} seed {seed}: not quiescent after the log", policy.label()));
            }
            runs += 1;
        }
    }
    within(start.elapsed(), GOLDEN_BUDGET)?;
    Ok(format!("{runs} runs over 3 policies x 5 seeds in {:?}", start.elapsed()))
}

fn avoid_k() -> Result<String, String> {
    const I: &str = "IncreaseRate";
    let start = Instant::now();
    let sequences = all_sequences(&[I, "DecreaseRate", "KeepRate"], 8);
    let mut checked = 0usize;
    for k in [2, 3, 5] {
        let program = avoid_k_in_a_row(I, k, &["DecreaseRate", "KeepRate"]).map_err(|e| e.to_string())?;
        for seq in &sequences {
            let mut exec = Execution::new([program.clone()], 0);
            for (t, a) in seq.iter().enumerate() {
                let blocked = exec.handle_agent_action(&Event::new(a)).map_err(|e| e.to_string())?;
                if blocked != scan_blocked(seq, t, &I, k) {
                    return Err(format!("k={k} {seq:?} step {t}: engine says {blocked}"));
                }
                checked += 1;
            }
        }
    }
    within(start.elapsed(), AVOID_K_BUDGET)?;
    Ok(format!(
        "{} sequences x k in {{2,3,5}}, {checked} steps match the scanner in {:?}",
        sequences.len(),
        start.elapsed()
    ))
}

fn penalty_grid() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    let mut cells = 0;
    for alpha in [-1.0, -0.5, 0.0, 0.5, 1.0] {
        for delta in [0.0, 1.0, 4.5, 10.0] {
            let cfg = PenaltyConfig::new(alpha, delta).map_err(|e| e.to_string())?;
            for candidate in [-10.0, -4.5, 0.0, 1.0, 10.0] {
                for blocked in [false, true] {
                    let expected = if blocked { alpha * candidate - delta } else { candidate };
                    worst = worst.max((shape_reward(candidate, blocked, &cfg) - expected).abs());
                    cells += 1;
                }
            }
        }
    }
    if worst <= REWARD_TOL {
        Ok(format!("{cells} cells, max error {worst:e} <= {REWARD_TOL:e}"))
    } else {
        Err(format!("max error {worst:e} > {REWARD_TOL:e}"))
    }
}

fn experiment_checks(report: &CompareReport) -> [Result<String, String>; 3] {
    if report.verdict == Verdict::InsufficientData {
        let e = || Err("default config produced insufficient data".to_owned());
        return [e(), e(), e()];
    }
    let b = report.baseline_violation_frequency;
    let s = report.shaped_violation_frequency;
    let reduction = if b > 0.0 && s <= b / MIN_REDUCTION {
        Ok(format!("baseline {b:.6}, shaped {s:.6}, ratio {:.2}", b / s.max(f64::MIN_POSITIVE)))
    } else {
        Err(format!("baseline {b:.6}, shaped {s:.6}, need baseline > 0 and shaped <= baseline/{MIN_REDUCTION}"))
    };
    let (rb, rs) = (report.baseline_mean_candidate_reward, report.shaped_mean_candidate_reward);
    let retention = if rs >= MIN_RETENTION * rb {
        Ok(format!("shaped {rs:.3} >= {MIN_RETENTION} x baseline {rb:.3}"))
    } else {
        Err(format!("shaped {rs:.3} < {MIN_RETENTION} x baseline {rb:.3}"))
    };
    let pairs: Vec<String> = report
        .rows
        .iter()
        .map(|r| {
            let show = |c: Option<usize>| c.map_or("never".to_owned(), |e| e.to_string());
            format!(
                "seed {}: {} vs {}",
                r.seed,
                show(r.baseline.convergence_episode),
                show(r.shaped.convergence_episode)
            )
        })
        .collect();
    let slower = report.slower_count();
    let detail = format!("shaped no earlier in {slower}/{} ({})", report.rows.len(), pairs.join("; "));
    let direction = if slower >= MIN_SLOWER_SEEDS { Ok(detail) } else { Err(detail) };
    [reduction, retention, direction]
}

fn non_interference() -> Result<String, String> {
    let names = ["IncreaseRate", "DecreaseRate", "KeepRate"];
    let mut shaped = ShapedEnv::new(
        NetSimEnv::new(LinkConfig::default()).map_err(|e| e.to_string())?,
        Execution::new([], 0),
        ActionMap::from_names(&names).map_err(|e| e.to_string())?,
        PenaltyConfig::default(),
    )
    .map_err(|e| e.to_string())?;
    let mut bare = NetSimEnv::new(LinkConfig::default()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    if shaped.reset().map_err(|e| e.to_string())? != bare.reset() {
        return Err("reset observations differ".to_owned());
    }
    let mut resets = 0;
    for t in 0..NON_INTERFERENCE_STEPS {
        let a = rng.random_range(0..3);
        let s = shaped.step(a).map_err(|e| e.to_string())?;
        let b = bare.step(a).map_err(|e| e.to_string())?;
        if (s.observation, s.reward, s.done) != (b.observation, b.reward, b.done) {
            return Err(format!("step {t} differs"));
        }
        if b.done {
            resets += 1;
            if shaped.reset().map_err(|e| e.to_string())? != bare.reset() {
                return Err(format!("reset after step {t} differs"));
            }
        }
    }
    Ok(format!("{NON_INTERFERENCE_STEPS} steps identical, {resets} episode boundaries"))
}

fn property_suites() -> Result<String, String> {
    let start = Instant::now();
    let run = |name: &str, check: &Property| -> Result<(), String> {
        let mut runner = TestRunner::new(Config {
            cases: PROPERTY_CASES,
            failure_persistence: None,
            ..Config::default()
        });
        let strategy = (arb_model(), arb_ops(), arb_policy(), proptest::num::u64::ANY);
        runner
            .run(&strategy, |(m, ops, p, seed)| check(&m, &ops, &p, seed))
            .map_err(|e| format!("{name}: {e}"))
    };
    run("selection safety", &check_selection_safety)?;
    run("blocking dominance", &|m, ops, _, _| check_blocking_dominance(m, ops))?;
    run("quiescence stability", &|m, _, p, seed| check_quiescence_stability(m, p, seed))?;
    run("determinism", &check_determinism)?;
    run("reference equivalence", &check_reference_equivalence)?;
    within(start.elapsed(), PROPERTY_BUDGET)?;
    Ok(format!("5 suites x {PROPERTY_CASES} cases in {:?}", start.elapsed()))
}

fn read_tree(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(d).expect("output dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("under root").display().to_string();
                out.push((rel, fs::read(&p).expect("readable")));
            }
        }
    }
    out.sort();
    out
}

fn main() {
    let mut gate = Gate { failed: 0 };
    gate.report(1, "golden water-tap trace", golden_trace());
    gate.report(2, "avoid-k blocking semantics", avoid_k());
    gate.report(3, "penalty grid", penalty_grid());

    let dir = tempfile::tempdir().expect("temp dir");
    let cfg = ExperimentConfig::default();
    let start = Instant::now();
    let first = cmd_compare(&cfg, &dir.path().join("first"));
    let elapsed = start.elapsed();
    match first {
        Ok(report) => {
            let [reduction, retention, direction] = experiment_checks(&report);
            let reduction = reduction.and_then(|d| {
                within(elapsed, EXPERIMENT_BUDGET)?;
                Ok(format!("{d}; {} seeds x {} episodes in {elapsed:?}", cfg.training.seeds.len(), cfg.training.episodes))
            });
            gate.report(4, "violation reduction", reduction);
            gate.report(5, "reward retention", retention);
            gate.report(6, "slower convergence direction", direction);
        }
        Err(e) => {
            for (id, name) in [(4, "violation reduction"), (5, "reward retention"), (6, "slower convergence direction")] {
                gate.report(id, name, Err(e.to_string()));
            }
        }
    }

    gate.report(7, "non-interference", non_interference());
    gate.report(8, "engine property suites", property_suites());

    let second = cmd_compare(&cfg, &dir.path().join("second"));
    let reproducible = match second {
        Ok(_) => {
            let (a, b) = (read_tree(&dir.path().join("first")), read_tree(&dir.path().join("second")));
            if a.is_empty() {
                Err("first run wrote nothing".to_owned())
            } else if a == b {
                Ok(format!("{} files byte-identical across two runs", a.len()))
            } else {
                let diff: Vec<&str> = a
                    .iter()
                    .zip(&b)
                    .filter(|(x, y)| x != y)
                    .map(|(x, _)| x.0.as_str())
                    .collect();
                Err(format!("files differ: {diff:?}"))
            }
        }
        Err(e) => Err(e.to_string()),
    };
    gate.report(9, "compare reproducibility", reproducible);

    println!("{} of 9 criteria failed", gate.failed);
    if gate.failed > 0 {
        std::process::exit(1);
    }
}
