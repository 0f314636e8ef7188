//! Deterministic simulation core for augmented-LLM inference serving.
//!
//! Requests alternate between decoding and external API calls. While a call is
//! in flight the request's KV context is preserved on the accelerator,
//! discarded (and recomputed later) or swapped to host memory. This crate
//! holds everything that is pure computation:
//!
//! - [`model`]: service-time, memory-waste and two-stage scheduling values.
//! - [`budget`]: the memory ledger and the dynamic per-iteration token budget.
//! - [`scheduler`]: queue bookkeeping, ranking strategies and batch building.
//! - [`engine`]: the iteration-quantized execution model that drives it all.
//! - [`workload`]: request shapes, arrival generators and predictors.
//! - [`metrics`]: per-request latency records and SLO aggregates.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the CLI and
//! experiment sweeps live in the `augsim` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod budget;
pub mod config;
pub mod engine;
pub mod error;
pub mod metrics;
pub mod model;
pub mod scheduler;
pub mod workload;

mod rng;

pub use budget::{compute_token_budget, BudgetMode, MemoryLedger};
pub use config::SimConfig;
pub use engine::{run, Engine, EngineOptions, RunOutput, RunStats};
pub use error::{Error, Result};
pub use metrics::{aggregate, finalize, MetricsRecord, Summary};
pub use model::{CostBreakdown, Policy};
pub use scheduler::{RankingStrategy, SchedState, Scheduler};
pub use workload::{CallSpec, Predictor, Request, RequestProfile, Segment, ShapeDist, TraceRecord};
