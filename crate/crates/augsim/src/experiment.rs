//! Experiment files and single runs.

use std::fs;
use std::path::{Path, PathBuf};

use augsim_core::engine::{self, EngineOptions, RunOutput, Stop};
use augsim_core::workload::{self, ArrivalProcess, Predictor, Request, ShapeDist, StopRule};
use augsim_core::{BudgetMode, RankingStrategy, SimConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{self, SummaryFile};
use crate::trace::{self, TraceError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid config at `{path}`: {reason}")]
    Config { path: String, reason: String },
    #[error("trace {path}: {source}")]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("simulation failed: {0}")]
    Sim(#[from] augsim_core::Error),
}

fn config_err(path: impl Into<String>, reason: impl Into<String>) -> ExperimentError {
    ExperimentError::Config {
        path: path.into(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Fcfs,
    Random,
    Augserve,
}

impl SchedulerKind {
    pub fn strategy(self, seed: u64) -> RankingStrategy {
        match self {
            SchedulerKind::Fcfs => RankingStrategy::Fcfs,
            SchedulerKind::Random => RankingStrategy::Random { seed },
            SchedulerKind::Augserve => RankingStrategy::AugServe,
        }
    }

    pub fn name(self) -> &'static str {
        self.strategy(0).name()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum WorkloadSpec {
    /// Poisson arrivals until `horizon` seconds.
    Poisson { rate: f64, horizon: f64 },
    /// Gamma arrivals with coefficient of variation `cv` until `horizon`.
    Gamma { rate: f64, cv: f64, horizon: f64 },
    /// `count` requests; runs until all finish. Gamma arrivals if `cv` is set.
    FixedCount {
        rate: f64,
        count: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cv: Option<f64>,
    },
    /// Replays a trace file; runs until all finish.
    Trace { path: PathBuf },
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec::Poisson {
            rate: 1.0,
            horizon: 60.0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(config_err(
                    format!("workload.{name}"),
                    format!("must be > 0, got {v}"),
                ))
            }
        };
        match self {
            WorkloadSpec::Poisson { rate, horizon } => {
                positive("rate", *rate)?;
                if !(horizon.is_finite() && *horizon >= 0.0) {
                    return Err(config_err(
                        "workload.horizon",
                        format!("must be >= 0, got {horizon}"),
                    ));
                }
            }
            WorkloadSpec::Gamma { rate, cv, horizon } => {
                positive("rate", *rate)?;
                positive("cv", *cv)?;
                if !(horizon.is_finite() && *horizon >= 0.0) {
                    return Err(config_err(
                        "workload.horizon",
                        format!("must be >= 0, got {horizon}"),
                    ));
                }
            }
            WorkloadSpec::FixedCount { rate, cv, .. } => {
                positive("rate", *rate)?;
                if let Some(cv) = cv {
                    positive("cv", *cv)?;
                }
            }
            WorkloadSpec::Trace { path } => {
                if !path.exists() {
                    return Err(config_err(
                        "workload.path",
                        format!("{} does not exist", path.display()),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn stop(&self) -> Stop {
        match *self {
            WorkloadSpec::Poisson { horizon, .. } | WorkloadSpec::Gamma { horizon, .. } => {
                Stop::Horizon(horizon)
            }
            _ => Stop::Drain,
        }
    }

    /// Builds the request stream.
    pub fn requests(&self, shape: &ShapeDist, seed: u64) -> Result<Vec<Request>, ExperimentError> {
        self.validate()?;
        let records = match *self {
            WorkloadSpec::Poisson { rate, horizon } => {
                workload::gen_poisson(rate, horizon, shape, seed)?
            }
            WorkloadSpec::Gamma { rate, cv, horizon } => {
                workload::gen_gamma(rate, cv, horizon, shape, seed)?
            }
            WorkloadSpec::FixedCount { rate, count, cv } => {
                let process = match cv {
                    Some(cv) => ArrivalProcess::Gamma { rate, cv },
                    None => ArrivalProcess::Poisson { rate },
                };
                workload::generate(process, StopRule::Count(count), shape, seed)?
            }
            WorkloadSpec::Trace { ref path } => {
                return trace::load_requests(path).map_err(|source| ExperimentError::Trace {
                    path: path.clone(),
                    source,
                })
            }
        };
        Ok(workload::records_to_requests(&records).expect("generated traces are ordered"))
    }
}

fn default_scheduler() -> SchedulerKind {
    SchedulerKind::Augserve
}

fn default_predictor() -> Predictor {
    Predictor::Oracle
}

fn default_budget() -> BudgetMode {
    BudgetMode::Dynamic
}

fn default_max_iterations() -> u64 {
    20_000_000
}

/// One experiment, as read from a TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default = "default_scheduler")]
    pub scheduler: SchedulerKind,
    #[serde(default = "default_predictor")]
    pub predictor: Predictor,
    #[serde(default = "default_budget")]
    pub budget: BudgetMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub shape: ShapeDist,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub event_log: bool,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            sim: SimConfig::default(),
            workload: WorkloadSpec::default(),
            scheduler: default_scheduler(),
            predictor: default_predictor(),
            budget: default_budget(),
            seed: 0,
            shape: ShapeDist::default(),
            out: None,
            event_log: false,
            max_iterations: default_max_iterations(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML. Relative trace paths resolve against `base_dir`.
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ExperimentError> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|source| ExperimentError::Toml {
                path: origin.to_path_buf(),
                source,
            })?;
        if let WorkloadSpec::Trace { path } = &mut cfg.workload {
            if path.is_relative() {
                if let Some(dir) = origin.parent() {
                    *path = dir.join(&*path);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|source| ExperimentError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.sim.validate().map_err(|e| match e {
            augsim_core::Error::InvalidConfig { field, reason } => {
                config_err(format!("sim.{field}"), reason)
            }
            other => config_err("sim", other.to_string()),
        })?;
        self.workload.validate()?;
        self.predictor
            .validate()
            .map_err(|e| config_err("predictor", e.to_string()))?;
        self.shape.validate().map_err(|e| match e {
            augsim_core::Error::InvalidConfig { field, reason } => config_err(field, reason),
            other => config_err("shape", other.to_string()),
        })?;
        if self.budget == BudgetMode::Static(0) {
            return Err(config_err("budget.static", "must be > 0"));
        }
        Ok(())
    }

    pub fn engine_options(&self) -> EngineOptions {
        EngineOptions {
            cfg: self.sim.clone(),
            strategy: self.scheduler.strategy(self.seed),
            budget: self.budget,
            predictor: self.predictor.clone(),
            seed: self.seed,
            stop: self.workload.stop(),
            max_iterations: self.max_iterations,
            record_events: self.event_log,
            timer: Some(crate::now_nanos),
        }
    }
}

pub struct RunResult {
    pub config: ExperimentConfig,
    pub requests: usize,
    pub output: RunOutput,
}

impl RunResult {
    pub fn summary_file(&self, run_id: &str) -> SummaryFile {
        SummaryFile {
            run_id: run_id.to_string(),
            scheduler: self.config.scheduler.name().to_string(),
            seed: self.config.seed,
            requests: self.requests,
            summary: self.output.summary(),
            stats: self.output.stats.clone(),
            event_hash: format!("{:016x}", self.output.event_hash),
            config: self.config.clone(),
        }
    }

    pub fn write(&self, dir: &Path, run_id: &str) -> Result<(), ExperimentError> {
        report::write_run(
            dir,
            &self.output.records,
            &self.summary_file(run_id),
            &self.output.events,
        )
        .map_err(|source| ExperimentError::Io {
            path: dir.to_path_buf(),
            source,
        })
    }
}

/// Generates the workload and simulates it.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunResult, ExperimentError> {
    config.validate()?;
    let requests = config.workload.requests(&config.shape, config.seed)?;
    run_requests(config, &requests)
}

/// Simulates an explicit request stream under `config`.
pub fn run_requests(
    config: &ExperimentConfig,
    requests: &[Request],
) -> Result<RunResult, ExperimentError> {
    config.validate()?;
    let output = engine::run(requests, &config.engine_options())?;
    Ok(RunResult {
        config: config.clone(),
        requests: requests.len(),
        output,
    })
}
