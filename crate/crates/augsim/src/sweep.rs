//! Cartesian sweeps and the static-budget profile.

use std::fs;
use std::path::Path;

use augsim_core::workload::Request;
use augsim_core::BudgetMode;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::experiment::{
    run_requests, ExperimentConfig, ExperimentError, SchedulerKind, WorkloadSpec,
};

/// A base experiment plus the axes to vary. Empty axes keep the base value.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    #[serde(default)]
    pub rates: Vec<f64>,
    #[serde(default)]
    pub cvs: Vec<f64>,
    #[serde(default)]
    pub schedulers: Vec<SchedulerKind>,
    #[serde(default)]
    pub budgets: Vec<BudgetMode>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut sweep: SweepConfig =
            toml::from_str(&text).map_err(|source| ExperimentError::Toml {
                path: path.to_path_buf(),
                source,
            })?;
        if let WorkloadSpec::Trace { path: p } = &mut sweep.base.workload {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(sweep)
    }

    /// Every combination of the axes, with a stable run id.
    pub fn expand(&self) -> Result<Vec<(String, ExperimentConfig)>, ExperimentError> {
        fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
            if values.is_empty() {
                vec![None]
            } else {
                values.iter().cloned().map(Some).collect()
            }
        }
        let mut runs = Vec::new();
        for rate in axis(&self.rates) {
            for cv in axis(&self.cvs) {
                for sched in axis(&self.schedulers) {
                    for budget in axis(&self.budgets) {
                        for seed in axis(&self.seeds) {
                            let mut cfg = self.base.clone();
                            let mut id = Vec::new();
                            if let Some(r) = rate {
                                set_rate(&mut cfg.workload, r)?;
                                id.push(format!("rate{r}"));
                            }
                            if let Some(c) = cv {
                                set_cv(&mut cfg.workload, c)?;
                                id.push(format!("cv{c}"));
                            }
                            if let Some(s) = sched {
                                cfg.scheduler = s;
                                id.push(s.name().to_string());
                            }
                            if let Some(b) = budget {
                                cfg.budget = b;
                                id.push(match b {
                                    BudgetMode::Dynamic => "dynamic".to_string(),
                                    BudgetMode::Static(n) => format!("static{n}"),
                                });
                            }
                            if let Some(s) = seed {
                                cfg.seed = s;
                                id.push(format!("seed{s}"));
                            }
                            if id.is_empty() {
                                id.push("base".into());
                            }
                            runs.push((id.join("_"), cfg));
                        }
                    }
                }
            }
        }
        Ok(runs)
    }
}

fn set_rate(w: &mut WorkloadSpec, r: f64) -> Result<(), ExperimentError> {
    match w {
        WorkloadSpec::Poisson { rate, .. }
        | WorkloadSpec::Gamma { rate, .. }
        | WorkloadSpec::FixedCount { rate, .. } => {
            *rate = r;
            Ok(())
        }
        WorkloadSpec::Trace { .. } => Err(ExperimentError::Config {
            path: "rates".into(),
            reason: "a trace workload has no rate".into(),
        }),
    }
}

fn set_cv(w: &mut WorkloadSpec, c: f64) -> Result<(), ExperimentError> {
    *w = match w.clone() {
        WorkloadSpec::Poisson { rate, horizon } | WorkloadSpec::Gamma { rate, horizon, .. } => {
            WorkloadSpec::Gamma {
                rate,
                cv: c,
                horizon,
            }
        }
        WorkloadSpec::FixedCount { rate, count, .. } => WorkloadSpec::FixedCount {
            rate,
            count,
            cv: Some(c),
        },
        WorkloadSpec::Trace { .. } => {
            return Err(ExperimentError::Config {
                path: "cvs".into(),
                reason: "a trace workload has no arrival process".into(),
            })
        }
    };
    Ok(())
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub run_id: String,
    pub scheduler: String,
    pub budget: String,
    pub seed: u64,
    pub requests: usize,
    pub completed: usize,
    pub incomplete: usize,
    pub goodput: f64,
    pub attainment: f64,
    pub mean_ttft: f64,
    pub p50_ttft: f64,
    pub p95_ttft: f64,
    pub mean_norm_latency: f64,
}

/// Runs every configuration in parallel. Each run writes its artifacts to
/// `out/<run id>/` when `out` is given; rows come back in expansion order.
pub fn run_sweep(
    runs: &[(String, ExperimentConfig)],
    out: Option<&Path>,
) -> Result<Vec<SweepRow>, ExperimentError> {
    runs.par_iter()
        .map(|(id, cfg)| {
            let res = crate::run_experiment(cfg)?;
            if let Some(dir) = out {
                res.write(&dir.join(id), id)?;
            }
            let s = res.output.summary();
            Ok(SweepRow {
                run_id: id.clone(),
                scheduler: cfg.scheduler.name().to_string(),
                budget: match cfg.budget {
                    BudgetMode::Dynamic => "dynamic".to_string(),
                    BudgetMode::Static(n) => n.to_string(),
                },
                seed: cfg.seed,
                requests: res.requests,
                completed: s.completed,
                incomplete: s.incomplete,
                goodput: s.goodput,
                attainment: s.attainment,
                mean_ttft: s.ttft.mean,
                p50_ttft: s.ttft.p50,
                p95_ttft: s.ttft.p95,
                mean_norm_latency: s.norm_latency.mean,
            })
        })
        .collect()
}

pub fn write_rows(path: &Path, rows: &[SweepRow]) -> Result<(), ExperimentError> {
    let io = |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| io(e.into()))?;
    for r in rows {
        w.serialize(r).map_err(|e| io(e.into()))?;
    }
    w.flush().map_err(io)
}

pub const DEFAULT_PROFILE_BUDGETS: [u64; 5] = [100, 500, 1000, 1500, 2000];

/// Goodput for one budget setting in a profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetRow {
    pub budget: String,
    pub goodput: f64,
    pub attainment: f64,
    pub completed: usize,
    pub p50_ttft: f64,
}

/// Runs `base` on one shared request stream under each static budget, then
/// under the dynamic budget with `target_max` set to the best static budget
/// (last row).
pub fn profile_budget(
    base: &ExperimentConfig,
    budgets: &[u64],
) -> Result<Vec<BudgetRow>, ExperimentError> {
    base.validate()?;
    if budgets.is_empty() {
        return Err(ExperimentError::Config {
            path: "profile_budget".into(),
            reason: "no budgets to profile".into(),
        });
    }
    let requests: Vec<Request> = base.workload.requests(&base.shape, base.seed)?;
    let run = |mode: BudgetMode, target_max: u64| -> Result<BudgetRow, ExperimentError> {
        let mut cfg = ExperimentConfig {
            budget: mode,
            ..base.clone()
        };
        cfg.sim.target_max = target_max;
        let s = run_requests(&cfg, &requests)?.output.summary();
        Ok(BudgetRow {
            budget: match mode {
                BudgetMode::Dynamic => format!("dynamic{target_max}"),
                BudgetMode::Static(n) => n.to_string(),
            },
            goodput: s.goodput,
            attainment: s.attainment,
            completed: s.completed,
            p50_ttft: s.ttft.p50,
        })
    };
    let mut rows: Vec<BudgetRow> = budgets
        .par_iter()
        .map(|&b| run(BudgetMode::Static(b), base.sim.target_max))
        .collect::<Result<_, _>>()?;
    let best = budgets
        .iter()
        .zip(&rows)
        .fold((budgets[0], f64::NEG_INFINITY), |acc, (&b, r)| {
            if r.goodput > acc.1 {
                (b, r.goodput)
            } else {
                acc
            }
        })
        .0;
    rows.push(run(BudgetMode::Dynamic, best)?);
    Ok(rows)
}
