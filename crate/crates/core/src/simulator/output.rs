//! On-disk artifacts of a simulation run.

use super::SimOutcome;
use crate::workload::format_float;
use std::fmt::Write as _;
use std::path::Path;

pub const TRACES_FILE: &str = "traces.csv";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

pub const TRACES_HEADER: &str =
    "id,arrival,retrieval_start,retrieval_end,generation_start,generation_end,completion,waiting,retrieval,generation,latency";

pub fn traces_csv(outcome: &SimOutcome) -> String {
    let mut s = String::with_capacity(160 * (outcome.traces.len() + 1));
    s.push_str(TRACES_HEADER);
    s.push('\n');
    for t in &outcome.traces {
        let cols = [
            t.arrival,
            t.retrieval_start,
            t.retrieval_end,
            t.generation_start,
            t.generation_end,
            t.completion,
            t.waiting(),
            t.retrieval(),
            t.generation(),
            t.latency(),
        ];
        let _ = write!(s, "{}", t.id);
        for c in cols {
            let _ = write!(s, ",{}", format_float(c));
        }
        s.push('\n');
    }
    s
}

pub fn events_jsonl(outcome: &SimOutcome) -> String {
    let mut s = String::new();
    for e in &outcome.events {
        s.push_str(&serde_json::to_string(e).expect("event serializes"));
        s.push('\n');
    }
    s
}

/// Names of the artifacts that already exist in `dir`.
pub fn existing_artifacts(dir: &Path) -> Vec<&'static str> {
    [TRACES_FILE, EVENTS_FILE, SUMMARY_FILE]
        .into_iter()
        .filter(|f| dir.join(f).exists())
        .collect()
}

/// Writes `traces.csv`, `events.jsonl` and `summary.json` into `dir`.
pub fn write_artifacts(outcome: &SimOutcome, dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(TRACES_FILE), traces_csv(outcome))?;
    std::fs::write(dir.join(EVENTS_FILE), events_jsonl(outcome))?;
    let mut summary = outcome.summary().to_json();
    summary.push('\n');
    std::fs::write(dir.join(SUMMARY_FILE), summary)
}
