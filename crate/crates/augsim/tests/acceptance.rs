//! Runs every acceptance criterion and prints one PASS/FAIL line for each.
//!
//! Criteria listed in `KNOWN_FAILING` are still run and reported; they do not
//! fail the target. Any other failure does.

#[path = "../../core/tests/oracle/mod.rs"]
mod oracle;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use augsim::experiment::{
    run_experiment, ExperimentConfig, RunResult, SchedulerKind, WorkloadSpec,
};
use augsim::report::requests_csv;
use augsim::sweep::{profile_budget, DEFAULT_PROFILE_BUDGETS};
use augsim_core::budget::{compute_token_budget, MemoryLedger};
use augsim_core::model::{self, Policy};
use augsim_core::workload::Predictor;
use augsim_core::{BudgetMode, SimConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

const KNOWN_FAILING: &[u32] = &[];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Every engine run made by the suite, kept for the invariant check.
#[derive(Default)]
struct Runs {
    count: usize,
    iterations: u64,
    problems: Vec<String>,
}

impl Runs {
    fn run(&mut self, cfg: &ExperimentConfig) -> RunResult {
        let res = match run_experiment(cfg) {
            Ok(r) => r,
            Err(e) => {
                self.problems.push(e.to_string());
                panic!("run failed: {e}");
            }
        };
        self.note(cfg, &res);
        res
    }

    fn note(&mut self, cfg: &ExperimentConfig, res: &RunResult) {
        let s = &res.output.stats;
        self.count += 1;
        self.iterations += s.iterations;
        if s.ledger_checks != s.iterations {
            self.problems.push(format!(
                "{} ledger checks for {} iterations",
                s.ledger_checks, s.iterations
            ));
        }
        if cfg.budget == BudgetMode::Dynamic && s.iterations > 0 {
            let (lo, hi) = cfg.sim.budget_bounds();
            if s.budget_min < lo || s.budget_max > hi {
                self.problems.push(format!(
                    "budget range [{}, {}] outside [{lo}, {hi}]",
                    s.budget_min, s.budget_max
                ));
            }
        }
    }
}

fn constrained() -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/constrained.toml");
    ExperimentConfig::load(&path).expect("constrained config")
}

fn with(
    base: &ExperimentConfig,
    sched: SchedulerKind,
    budget: BudgetMode,
    rate: f64,
    cv: Option<f64>,
) -> ExperimentConfig {
    let count = match base.workload {
        WorkloadSpec::FixedCount { count, .. } => count,
        _ => 500,
    };
    ExperimentConfig {
        scheduler: sched,
        budget,
        workload: WorkloadSpec::FixedCount { rate, count, cv },
        ..base.clone()
    }
}

/// The baseline systems run a fixed budget at the profiled forward size.
fn baseline_budget(cfg: &ExperimentConfig) -> BudgetMode {
    BudgetMode::Static(cfg.sim.n_fwd_max)
}

/// Completions per second when every request arrives at once, under the
/// baseline system.
fn burst_capacity(base: &ExperimentConfig, runs: &mut Runs) -> f64 {
    let cfg = with(base, SchedulerKind::Fcfs, baseline_budget(base), 1e6, None);
    let out = runs.run(&cfg).output;
    out.records.len() as f64 / out.makespan
}

fn c1_oracle() -> Outcome {
    let start = Instant::now();
    let errs = oracle::check::compare_all(10_000, 0xACCE);
    let secs = start.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.max_rel_err).fold(0.0, f64::max);
    let bad: Vec<&str> = errs
        .iter()
        .filter(|e| e.max_rel_err > 1e-9)
        .map(|e| e.op)
        .collect();
    outcome(
        bad.is_empty() && secs < 5.0,
        format!(
            "{} ops x 10^4 draws, worst rel err {worst:.2e}, {secs:.2}s{}",
            errs.len(),
            if bad.is_empty() {
                String::new()
            } else {
                format!(", off: {bad:?}")
            }
        ),
    )
}

fn c2_proposition() -> Outcome {
    let bad = oracle::check::proposition_counterexamples(10_000, 0xB0B);
    outcome(bad == 0, format!("{bad} counterexamples in 10^4 pairs"))
}

fn c3_goldens() -> Outcome {
    let c = SimConfig {
        m_per_token: 1.0,
        t_fwd: 0.1,
        n_fwd_max: 50,
        s_fwd_out: 200,
        s_fwd_in: 200,
        ..SimConfig::default()
    };
    let mut checks: Vec<(&str, f64, f64)> = vec![
        (
            "service_time",
            model::service_time(10, 100, 100, 0.1).unwrap(),
            1.1,
        ),
        (
            "stage1 swap",
            model::stage1_value(100, 10, 2.0, Policy::Swap, &c)
                .unwrap()
                .0,
            118.025,
        ),
        (
            "stage1 discard",
            model::stage1_value(100, 10, 2.0, Policy::Discard, &c)
                .unwrap()
                .0,
            115.0,
        ),
        (
            "stage2 discard",
            model::stage2_value(110, 20, 5, Policy::Discard, &c)
                .unwrap()
                .0,
            83.15,
        ),
        (
            "stage2 preserve",
            model::stage2_value(110, 20, 5, Policy::Preserve, &c)
                .unwrap()
                .0,
            71.05,
        ),
        (
            "final swap",
            model::final_value(71.05, 110, 20, 5, Policy::Swap, 0.0, &c).unwrap(),
            75.606_25,
        ),
        (
            "waste swap",
            model::waste_for_policy(Policy::Swap, 100, 2.0, 0, &c).unwrap(),
            5.0,
        ),
        (
            "waste discard",
            model::waste_for_policy(Policy::Discard, 100, 2.0, 300, &c).unwrap(),
            80.0,
        ),
        (
            "priority",
            model::priority_score(100.0, 10.0, 2.0).unwrap(),
            80.0,
        ),
    ];
    let bc = SimConfig {
        gamma: 1.0,
        target_max: 300,
        ..SimConfig::default()
    };
    for (name, active, paused, want) in [
        ("budget 400", 200.0, 100.0, 400.0),
        ("budget 150", 850.0, 0.0, 150.0),
        ("budget 450", 0.0, 0.0, 450.0),
    ] {
        let l = MemoryLedger {
            g_total: 1000.0,
            g_fixed: 400.0,
            kv_active: active,
            kv_paused: paused,
        };
        checks.push((name, compute_token_budget(&l, &bc) as f64, want));
    }
    let fails: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-9)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    // The final swap value is quoted to four places as 75.6063.
    let rounded = (checks[5].1 * 1e4).round() / 1e4;
    outcome(
        fails.is_empty() && rounded == 75.6063,
        if fails.is_empty() {
            format!("{} goldens exact", checks.len())
        } else {
            fails.join("; ")
        },
    )
}

struct Overload {
    rate: f64,
    fcfs: RunResult,
    random: RunResult,
    augserve: RunResult,
    fcfs_dynamic: RunResult,
    max_secs: f64,
}

fn overload(base: &ExperimentConfig, capacity: f64, runs: &mut Runs) -> Overload {
    let rate = 2.0 * capacity;
    let mut max_secs = 0.0f64;
    let mut timed = |cfg: ExperimentConfig, runs: &mut Runs| {
        let t = Instant::now();
        let r = runs.run(&cfg);
        max_secs = max_secs.max(t.elapsed().as_secs_f64());
        r
    };
    let b = baseline_budget(base);
    let fcfs = timed(with(base, SchedulerKind::Fcfs, b, rate, None), runs);
    let random = timed(with(base, SchedulerKind::Random, b, rate, None), runs);
    let augserve = timed(
        with(
            base,
            SchedulerKind::Augserve,
            BudgetMode::Dynamic,
            rate,
            None,
        ),
        runs,
    );
    let fcfs_dynamic = timed(
        with(base, SchedulerKind::Fcfs, BudgetMode::Dynamic, rate, None),
        runs,
    );
    Overload {
        rate,
        fcfs,
        random,
        augserve,
        fcfs_dynamic,
        max_secs,
    }
}

fn c4_random_and_augserve_beat_fcfs(o: &Overload) -> Outcome {
    let (f, r, a) = (
        o.fcfs.output.summary(),
        o.random.output.summary(),
        o.augserve.output.summary(),
    );
    let pass = r.goodput >= f.goodput
        && a.goodput >= 1.5 * f.goodput
        && a.ttft.p50 <= 0.5 * f.ttft.p50
        && o.max_secs < 30.0;
    outcome(
        pass,
        format!(
            "rate {:.3}: goodput fcfs {:.4}, random {:.4}, augserve {:.4}; p50 ttft fcfs {:.2}s, augserve {:.2}s; slowest run {:.2}s",
            o.rate, f.goodput, r.goodput, a.goodput, f.ttft.p50, a.ttft.p50, o.max_secs
        ),
    )
}

fn c5_fcfs_breaches(o: &Overload) -> Outcome {
    let recs = &o.fcfs.output.records;
    let slo = o.fcfs.config.sim.slo_ttft;
    let late = recs.iter().filter(|r| r.ttft > slo).count();
    let frac = late as f64 / recs.len() as f64;
    outcome(
        frac >= 0.5,
        format!(
            "{late}/{} fcfs requests over {slo}s TTFT ({:.1}%)",
            recs.len(),
            frac * 100.0
        ),
    )
}

fn c6_budget_profile(base: &ExperimentConfig, rate: f64, runs: &mut Runs) -> Outcome {
    let mut pass = false;
    let mut parts = Vec::new();
    for sched in [SchedulerKind::Fcfs, SchedulerKind::Augserve] {
        let cfg = with(base, sched, BudgetMode::Dynamic, rate, None);
        let rows = profile_budget(&cfg, &DEFAULT_PROFILE_BUDGETS).expect("profile");
        runs.count += rows.len();
        let statics = &rows[..rows.len() - 1];
        let dynamic = &rows[rows.len() - 1];
        let g: Vec<f64> = statics.iter().map(|r| r.goodput).collect();
        let best = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let inner = g[1..g.len() - 1]
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let interior = inner > g[0] && inner > g[g.len() - 1];
        let close = dynamic.goodput >= 0.95 * best;
        pass |= interior && close;
        let table: Vec<String> = statics
            .iter()
            .map(|r| format!("{}:{:.4}", r.budget, r.goodput))
            .collect();
        parts.push(format!(
            "{} [{}] {}:{:.4} (interior max {}, dynamic/best {:.3})",
            sched.name(),
            table.join(" "),
            dynamic.budget,
            dynamic.goodput,
            if interior { "yes" } else { "no" },
            dynamic.goodput / best
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c7_cv_robustness(base: &ExperimentConfig, capacity: f64, runs: &mut Runs) -> Outcome {
    let mut drop = |sched, budget| {
        let g1 = runs
            .run(&with(base, sched, budget, capacity, Some(1.0)))
            .output
            .summary()
            .goodput;
        let g2 = runs
            .run(&with(base, sched, budget, capacity, Some(2.0)))
            .output
            .summary()
            .goodput;
        (g1, g2, (g1 - g2) / g1)
    };
    let f = drop(SchedulerKind::Fcfs, baseline_budget(base));
    let a = drop(SchedulerKind::Augserve, BudgetMode::Dynamic);
    outcome(
        f.2 > a.2,
        format!(
            "rate {capacity:.3}: fcfs {:.4} -> {:.4} ({:.1}% drop), augserve {:.4} -> {:.4} ({:.1}% drop)",
            f.0,
            f.1,
            f.2 * 100.0,
            a.0,
            a.1,
            a.2 * 100.0
        ),
    )
}

fn c8_ablation(o: &Overload) -> Outcome {
    let fs = o.fcfs.output.summary().goodput;
    let fd = o.fcfs_dynamic.output.summary().goodput;
    let a = o.augserve.output.summary().goodput;
    outcome(
        fd > fs && a > fd,
        format!("fcfs static {fs:.4} < fcfs dynamic {fd:.4} < augserve {a:.4}"),
    )
}

fn c9_invariants(runs: &Runs) -> Outcome {
    outcome(
        runs.problems.is_empty(),
        format!(
            "{} runs, {} iterations checked in-engine, {} violations",
            runs.count,
            runs.iterations,
            runs.problems.len()
        ),
    )
}

fn c10_determinism(base: &ExperimentConfig, runs: &mut Runs) -> Outcome {
    let mut digests = Vec::new();
    for cfg in [
        base.clone(),
        with(
            base,
            SchedulerKind::Random,
            BudgetMode::Static(700),
            3.0,
            Some(2.0),
        ),
    ] {
        let a = Sha256::digest(requests_csv(&runs.run(&cfg).output.records).unwrap());
        let b = Sha256::digest(requests_csv(&runs.run(&cfg).output.records).unwrap());
        let hex: String = a.iter().take(8).map(|x| format!("{x:02x}")).collect();
        digests.push((a == b, hex));
    }
    outcome(
        digests.iter().all(|d| d.0),
        format!(
            "requests.csv sha256 stable across reruns ({})",
            digests
                .iter()
                .map(|d| d.1.clone())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn c11_predictors() -> Outcome {
    let edges = vec![0u64, 16, 64, 256, 1024, 4096];
    let mut lines = Vec::new();
    let mut pass = true;
    for acc in [0.85, 0.65] {
        let p = Predictor::BucketLength {
            edges: edges.clone(),
            accuracy: acc,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let mut truth = ChaCha8Rng::seed_from_u64(102);
        let mut hits = 0;
        for _ in 0..10_000 {
            let len = truth.random_range(1..4096u64);
            let b = edges[1..].iter().position(|&e| len <= e).unwrap();
            if p.predict((len, 1.0), &mut rng).0 == (edges[b] + edges[b + 1]) / 2 {
                hits += 1;
            }
        }
        let got = hits as f64 / 10_000.0;
        pass &= (got - acc).abs() <= 0.02;
        lines.push(format!("accuracy {acc}: {got:.4}"));
    }
    for mse in [25.0, 0.16] {
        let p = Predictor::NoisyDuration { mse };
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        let mut truth = ChaCha8Rng::seed_from_u64(104);
        let lo = 8.0 * f64::sqrt(mse);
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let d = truth.random_range(lo..lo + 60.0);
            sum += (p.predict((10, d), &mut rng).1 - d).powi(2);
        }
        let got = sum / 10_000.0;
        pass &= (got - mse).abs() <= 0.1 * mse;
        lines.push(format!("mse {mse}: {got:.4}"));
    }
    outcome(pass, lines.join(", "))
}

fn c12_overhead(base: &ExperimentConfig, rate: f64, runs: &mut Runs) -> Outcome {
    let mut cfg = with(
        base,
        SchedulerKind::Augserve,
        BudgetMode::Dynamic,
        rate,
        None,
    );
    cfg.workload = WorkloadSpec::FixedCount {
        rate,
        count: 1000,
        cv: None,
    };
    let out = runs.run(&cfg).output;
    let s = &out.stats;
    let sched = s.sched_nanos as f64 * 1e-9;
    let share = sched / (sched + s.busy_time);
    let per_iter_us = sched / s.iterations as f64 * 1e6;
    let step_ms = s.busy_time / s.iterations as f64 * 1e3;
    let in_process = s.sched_nanos as f64 / s.total_nanos.max(1) as f64;
    outcome(
        share <= 0.10 && out.records.len() == 1000,
        format!(
            "1000 requests: scheduling {per_iter_us:.1}us per iteration vs {step_ms:.2}ms engine step, {:.3}% of serving time ({:.0}% of simulator wall time)",
            share * 100.0,
            in_process * 100.0
        ),
    )
}

fn main() -> ExitCode {
    let base = constrained();
    let mut runs = Runs::default();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();

    results.push((1, "cost model matches independent oracle", c1_oracle()));
    results.push((2, "earlier-finish condition", c2_proposition()));
    results.push((3, "worked-example goldens", c3_goldens()));

    let capacity = burst_capacity(&base, &mut runs);
    let o = overload(&base, capacity, &mut runs);
    results.push((
        4,
        "random and augserve beat fcfs under overload",
        c4_random_and_augserve_beat_fcfs(&o),
    ));
    results.push((
        5,
        "fcfs misses TTFT for most requests under overload",
        c5_fcfs_breaches(&o),
    ));
    results.push((
        6,
        "static budget profile shape and dynamic budget",
        c6_budget_profile(&base, o.rate, &mut runs),
    ));
    results.push((
        7,
        "burstier arrivals hurt fcfs more than augserve",
        c7_cv_robustness(&base, capacity, &mut runs),
    ));
    results.push((
        8,
        "dynamic budget and ranking both add goodput",
        c8_ablation(&o),
    ));
    let c10 = c10_determinism(&base, &mut runs);
    let c12 = c12_overhead(&base, o.rate, &mut runs);
    results.push((9, "memory and budget invariants", c9_invariants(&runs)));
    results.push((10, "byte-identical reruns", c10));
    results.push((11, "predictor error levels", c11_predictors()));
    results.push((12, "scheduling overhead", c12));
    results.sort_by_key(|r| r.0);

    println!(
        "burst capacity {capacity:.4} req/s, overload rate {:.4} req/s",
        o.rate
    );
    let mut unexpected = 0;
    for (n, name, r) in &results {
        let known = KNOWN_FAILING.contains(n);
        let tag = match (r.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => {
                unexpected += 1;
                "FAIL"
            }
        };
        println!("criterion {n:>2} {tag:<12} {name}: {}", r.detail);
    }
    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("{passed}/{} criteria pass", results.len());
    if unexpected == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
