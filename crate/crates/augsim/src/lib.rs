//! File formats, experiment configuration and sweeps around `augsim-core`.
//!
//! - [`trace`]: line-delimited JSON traces.
//! - [`report`]: `requests.csv`, `summary.json` and the event log.
//! - [`experiment`]: TOML experiment files and single runs.
//! - [`sweep`]: cartesian sweeps and the static-budget profile.

pub mod experiment;
pub mod report;
pub mod sweep;
pub mod trace;

pub use experiment::{
    run_experiment, ExperimentConfig, ExperimentError, RunResult, SchedulerKind, WorkloadSpec,
};

use std::sync::OnceLock;
use std::time::Instant;

/// Nanoseconds since the first call; the engine's scheduling timer.
pub fn now_nanos() -> u64 {
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_nanos() as u64
}
