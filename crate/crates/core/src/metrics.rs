//! Per-request latency records and SLO aggregates.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub request_id: u64,
    pub arrival: f64,
    pub first_token_time: f64,
    pub finish_time: f64,
    pub generated_len: u64,
    pub ttft: f64,
    pub e2e: f64,
    pub norm_latency: f64,
    pub tpot: f64,
    pub slo_ok: bool,
}

/// Derives latency fields and the SLO verdict for one finished request.
pub fn finalize(
    request_id: u64,
    arrival: f64,
    first_token_time: f64,
    finish_time: f64,
    generated_len: u64,
    cfg: &SimConfig,
) -> Result<MetricsRecord> {
    let bad = |reason| Error::UnorderedTimestamps {
        id: request_id,
        reason,
    };
    if !(arrival.is_finite() && first_token_time.is_finite() && finish_time.is_finite()) {
        return Err(bad("non-finite timestamps".into()));
    }
    if first_token_time < arrival {
        return Err(bad(format!(
            "first token at {first_token_time} precedes arrival at {arrival}"
        )));
    }
    if finish_time < first_token_time {
        return Err(bad(format!(
            "finish at {finish_time} precedes first token at {first_token_time}"
        )));
    }
    if generated_len == 0 {
        return Err(bad("finished without generating a token".into()));
    }
    let ttft = first_token_time - arrival;
    let e2e = finish_time - arrival;
    let norm_latency = e2e / generated_len as f64;
    let tpot = (finish_time - first_token_time) / (generated_len.saturating_sub(1).max(1)) as f64;
    Ok(MetricsRecord {
        request_id,
        arrival,
        first_token_time,
        finish_time,
        generated_len,
        ttft,
        e2e,
        norm_latency,
        tpot,
        slo_ok: ttft < cfg.slo_ttft && norm_latency < cfg.slo_norm_latency(),
    })
}

/// Order statistics of one metric. Percentiles use the nearest-rank method.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Dist {
    pub mean: f64,
    pub min: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

/// Nearest-rank percentile of ascending `sorted` for an integer percent.
pub fn nearest_rank(sorted: &[f64], percent: u32) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let n = sorted.len();
    let rank = (percent as usize * n).div_ceil(100).clamp(1, n);
    sorted[rank - 1]
}

impl Dist {
    pub fn of(values: impl Iterator<Item = f64>) -> Dist {
        let mut v: Vec<f64> = values.collect();
        if v.is_empty() {
            return Dist::default();
        }
        v.sort_by(f64::total_cmp);
        Dist {
            // Summing in sorted order keeps the result independent of input order.
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v[0],
            p50: nearest_rank(&v, 50),
            p95: nearest_rank(&v, 95),
            max: v[v.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub completed: usize,
    /// Requests still unfinished when the run stopped.
    pub incomplete: usize,
    pub slo_ok: usize,
    /// Seconds the goodput is normalized by.
    pub horizon: f64,
    /// SLO-satisfying completions per second.
    pub goodput: f64,
    /// Fraction of completed requests that met the SLO.
    pub attainment: f64,
    pub ttft: Dist,
    pub norm_latency: Dist,
    pub tpot: Dist,
    /// Set when there were no completed records to aggregate.
    pub empty: bool,
}

pub fn aggregate(records: &[MetricsRecord], horizon: f64) -> Summary {
    let completed = records.len();
    let slo_ok = records.iter().filter(|r| r.slo_ok).count();
    let goodput = if horizon > 0.0 {
        slo_ok as f64 / horizon
    } else {
        0.0
    };
    Summary {
        completed,
        incomplete: 0,
        slo_ok,
        horizon,
        goodput,
        attainment: if completed > 0 {
            slo_ok as f64 / completed as f64
        } else {
            0.0
        },
        ttft: Dist::of(records.iter().map(|r| r.ttft)),
        norm_latency: Dist::of(records.iter().map(|r| r.norm_latency)),
        tpot: Dist::of(records.iter().map(|r| r.tpot)),
        empty: completed == 0,
    }
}
