//! Line-delimited JSON traces, one request per line.

use std::fs;
use std::path::{Path, PathBuf};

use augsim_core::workload::{records_to_requests, Request, TraceRecord};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: {reason}")]
    Invalid { line: usize, reason: String },
    #[error("trace contains no records")]
    Empty,
}

/// Parses trace text. Blank lines are ignored; line numbers are 1-based.
pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceError> {
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(raw).map_err(|e| TraceError::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        records.push(rec);
        lines.push(i + 1);
    }
    if records.is_empty() {
        return Err(TraceError::Empty);
    }
    records_to_requests(&records).map_err(|(k, reason)| TraceError::Invalid {
        line: lines[k],
        reason,
    })?;
    Ok(records)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_trace(&text)
}

pub fn to_jsonl(records: &[TraceRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("trace records serialize"));
        out.push('\n');
    }
    out
}

pub fn save_trace(path: &Path, records: &[TraceRecord]) -> Result<(), TraceError> {
    fs::write(path, to_jsonl(records)).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads a trace and converts it to requests with ids `0..n`.
pub fn load_requests(path: &Path) -> Result<Vec<Request>, TraceError> {
    let records = load_trace(path)?;
    Ok(records_to_requests(&records).expect("validated by load_trace"))
}
