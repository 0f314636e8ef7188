//! Run artifacts: `requests.csv`, `summary.json` and `events.jsonl`.

use std::fs;
use std::io::Write;
use std::path::Path;

use augsim_core::engine::{EventRecord, RunStats};
use augsim_core::metrics::{MetricsRecord, Summary};
use serde::{Deserialize, Serialize};

use crate::experiment::ExperimentConfig;

/// Column order of `requests.csv`.
pub const REQUESTS_HEADER: [&str; 10] = [
    "request_id",
    "arrival",
    "first_token_time",
    "finish_time",
    "generated_len",
    "ttft",
    "e2e",
    "norm_latency",
    "tpot",
    "slo_ok",
];

pub fn requests_csv(records: &[MetricsRecord]) -> Result<Vec<u8>, csv::Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REQUESTS_HEADER)?;
    for r in records {
        w.write_record(&[
            r.request_id.to_string(),
            r.arrival.to_string(),
            r.first_token_time.to_string(),
            r.finish_time.to_string(),
            r.generated_len.to_string(),
            r.ttft.to_string(),
            r.e2e.to_string(),
            r.norm_latency.to_string(),
            r.tpot.to_string(),
            r.slo_ok.to_string(),
        ])?;
    }
    Ok(w.into_inner().expect("in-memory writer"))
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryFile {
    pub run_id: String,
    pub scheduler: String,
    pub seed: u64,
    pub requests: usize,
    pub summary: Summary,
    pub stats: RunStats,
    pub event_hash: String,
    pub config: ExperimentConfig,
}

pub fn write_run(
    dir: &Path,
    records: &[MetricsRecord],
    summary: &SummaryFile,
    events: &[EventRecord],
) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let csv = requests_csv(records).map_err(std::io::Error::other)?;
    fs::write(dir.join("requests.csv"), csv)?;
    let json = serde_json::to_string_pretty(summary).map_err(std::io::Error::other)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    if !events.is_empty() {
        let mut f = std::io::BufWriter::new(fs::File::create(dir.join("events.jsonl"))?);
        for e in events {
            serde_json::to_writer(&mut f, e).map_err(std::io::Error::other)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }
    Ok(())
}

/// The one-line summary printed after a run.
pub fn one_line(s: &Summary) -> String {
    format!(
        "goodput={:.4} req/s attainment={:.2}% mean_ttft={:.3}s p95_ttft={:.3}s completed={} incomplete={}{}",
        s.goodput,
        s.attainment * 100.0,
        s.ttft.mean,
        s.ttft.p95,
        s.completed,
        s.incomplete,
        if s.empty { " (no completed requests)" } else { "" }
    )
}
