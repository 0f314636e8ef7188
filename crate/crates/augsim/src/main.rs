use std::path::PathBuf;
use std::process::ExitCode;

use augsim::experiment::{ExperimentConfig, ExperimentError, SchedulerKind, WorkloadSpec};
use augsim::report::one_line;
use augsim::sweep::{self, SweepConfig, DEFAULT_PROFILE_BUDGETS};
use augsim::trace;
use augsim_core::workload::TraceRecord;
use augsim_core::BudgetMode;
use clap::Parser;

/// Simulates augmented-LLM serving and writes per-request metrics.
#[derive(Debug, Parser)]
#[command(name = "augsim", version)]
struct Args {
    /// Experiment file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sweep file (TOML); runs every combination and writes one directory per run.
    #[arg(long, conflicts_with = "profile_budget")]
    sweep: Option<PathBuf>,
    /// Profile goodput over static budgets (comma-separated) plus the dynamic budget.
    #[arg(long, num_args = 0..=1, value_delimiter = ',', default_missing_value = "100,500,1000,1500,2000")]
    profile_budget: Option<Vec<u64>>,

    #[arg(long, value_enum)]
    scheduler: Option<SchedulerKind>,
    /// Arrival rate in requests per second.
    #[arg(long)]
    rate: Option<f64>,
    /// Coefficient of variation of inter-arrival gaps (switches to Gamma arrivals).
    #[arg(long)]
    cv: Option<f64>,
    /// Arrival horizon in seconds.
    #[arg(long)]
    duration_s: Option<f64>,
    /// Fixed request count; the run drains all of them.
    #[arg(long)]
    requests: Option<usize>,
    /// Replay a trace file instead of generating arrivals.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed token budget instead of the dynamic one.
    #[arg(long)]
    static_budget: Option<u64>,
    /// Also write events.jsonl.
    #[arg(long)]
    event_log: bool,
    /// Write the generated workload as a trace file and exit.
    #[arg(long)]
    dump_trace: Option<PathBuf>,

    #[arg(long)]
    m_per_token: Option<f64>,
    #[arg(long)]
    t_fwd: Option<f64>,
    #[arg(long)]
    n_fwd_max: Option<u64>,
    #[arg(long)]
    s_fwd_out: Option<u64>,
    #[arg(long)]
    s_fwd_in: Option<u64>,
    #[arg(long)]
    g_total: Option<f64>,
    #[arg(long)]
    g_model: Option<f64>,
    #[arg(long)]
    g_runtime: Option<f64>,
    #[arg(long)]
    g_safety: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta_low: Option<f64>,
    #[arg(long)]
    beta_high: Option<f64>,
    #[arg(long)]
    target_max: Option<u64>,
    #[arg(long)]
    slo_ttft: Option<f64>,
    #[arg(long)]
    slo_norm_mult: Option<f64>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Args {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<(), ExperimentError> {
        let s = &mut cfg.sim;
        set(&mut s.m_per_token, self.m_per_token);
        set(&mut s.t_fwd, self.t_fwd);
        set(&mut s.n_fwd_max, self.n_fwd_max);
        set(&mut s.s_fwd_out, self.s_fwd_out);
        set(&mut s.s_fwd_in, self.s_fwd_in);
        set(&mut s.g_total, self.g_total);
        set(&mut s.g_model, self.g_model);
        set(&mut s.g_runtime, self.g_runtime);
        set(&mut s.g_safety, self.g_safety);
        set(&mut s.gamma, self.gamma);
        set(&mut s.alpha, self.alpha);
        set(&mut s.beta_low, self.beta_low);
        set(&mut s.beta_high, self.beta_high);
        set(&mut s.target_max, self.target_max);
        set(&mut s.slo_ttft, self.slo_ttft);
        set(&mut s.slo_norm_mult, self.slo_norm_mult);
        set(&mut cfg.scheduler, self.scheduler);
        set(&mut cfg.seed, self.seed);
        if let Some(b) = self.static_budget {
            cfg.budget = BudgetMode::Static(b);
        }
        if self.event_log {
            cfg.event_log = true;
        }
        if let Some(out) = &self.out {
            cfg.out = Some(out.clone());
        }
        cfg.workload = self.workload(&cfg.workload)?;
        Ok(())
    }

    fn workload(&self, base: &WorkloadSpec) -> Result<WorkloadSpec, ExperimentError> {
        if let Some(path) = &self.trace {
            if self.rate.is_some()
                || self.cv.is_some()
                || self.requests.is_some()
                || self.duration_s.is_some()
            {
                return Err(ExperimentError::Config {
                    path: "workload".into(),
                    reason:
                        "--trace cannot be combined with --rate, --cv, --requests or --duration-s"
                            .into(),
                });
            }
            return Ok(WorkloadSpec::Trace { path: path.clone() });
        }
        let (rate0, cv0, horizon0, count0) = match base {
            WorkloadSpec::Poisson { rate, horizon } => (*rate, None, *horizon, None),
            WorkloadSpec::Gamma { rate, cv, horizon } => (*rate, Some(*cv), *horizon, None),
            WorkloadSpec::FixedCount { rate, count, cv } => (*rate, *cv, 60.0, Some(*count)),
            WorkloadSpec::Trace { .. } => {
                if self.rate.is_some()
                    || self.cv.is_some()
                    || self.requests.is_some()
                    || self.duration_s.is_some()
                {
                    return Err(ExperimentError::Config {
                        path: "workload".into(),
                        reason: "the config replays a trace; arrival flags do not apply".into(),
                    });
                }
                return Ok(base.clone());
            }
        };
        let rate = self.rate.unwrap_or(rate0);
        let cv = self.cv.or(cv0);
        let horizon = self.duration_s.unwrap_or(horizon0);
        let count = if self.duration_s.is_some() && self.requests.is_none() {
            None
        } else {
            self.requests.or(count0)
        };
        Ok(match (count, cv) {
            (Some(count), cv) => WorkloadSpec::FixedCount { rate, count, cv },
            (None, Some(cv)) => WorkloadSpec::Gamma { rate, cv, horizon },
            (None, None) => WorkloadSpec::Poisson { rate, horizon },
        })
    }
}

fn run(args: Args) -> Result<(), ExperimentError> {
    if let Some(path) = &args.sweep {
        let mut sw = SweepConfig::load(path)?;
        args.apply(&mut sw.base)?;
        let out = sw.base.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        let runs = sw.expand()?;
        let rows = sweep::run_sweep(&runs, Some(&out))?;
        sweep::write_rows(&out.join("sweep.csv"), &rows)?;
        for r in &rows {
            println!(
                "{:<32} goodput={:.4} attainment={:.2}% p50_ttft={:.3}s",
                r.run_id,
                r.goodput,
                r.attainment * 100.0,
                r.p50_ttft
            );
        }
        println!("{} runs written to {}", rows.len(), out.display());
        return Ok(());
    }

    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    args.apply(&mut cfg)?;
    cfg.validate()?;
    let out = cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"));

    if let Some(path) = &args.dump_trace {
        let reqs = cfg.workload.requests(&cfg.shape, cfg.seed)?;
        let records: Vec<TraceRecord> = reqs.iter().map(TraceRecord::from_request).collect();
        trace::save_trace(path, &records).map_err(|source| ExperimentError::Trace {
            path: path.clone(),
            source,
        })?;
        println!("{} requests written to {}", records.len(), path.display());
        return Ok(());
    }

    if let Some(budgets) = &args.profile_budget {
        let budgets = if budgets.is_empty() {
            DEFAULT_PROFILE_BUDGETS.to_vec()
        } else {
            budgets.clone()
        };
        let rows = sweep::profile_budget(&cfg, &budgets)?;
        let path = out.join("budget_profile.csv");
        std::fs::create_dir_all(&out).map_err(|source| ExperimentError::Io {
            path: out.clone(),
            source,
        })?;
        let mut w = csv::Writer::from_path(&path).map_err(|e| ExperimentError::Io {
            path: path.clone(),
            source: e.into(),
        })?;
        println!("{:>8} {:>10} {:>10}", "budget", "goodput", "attain%");
        for r in &rows {
            println!(
                "{:>8} {:>10.4} {:>10.2}",
                r.budget,
                r.goodput,
                r.attainment * 100.0
            );
            w.serialize(r).map_err(|e| ExperimentError::Io {
                path: path.clone(),
                source: e.into(),
            })?;
        }
        w.flush()
            .map_err(|source| ExperimentError::Io { path, source })?;
        return Ok(());
    }

    let res = augsim::run_experiment(&cfg)?;
    res.write(&out, "run")?;
    println!("{}", one_line(&res.output.summary()));
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
