//! Aggregate latency metrics, the text report and summary comparison.

use super::{SimError, SimMode, SimOutcome};
use crate::domain::RequestTrace;
use crate::memory_planner::TierUsage;
use crate::units::Gib;
use crate::workload::IntervalSchedule;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub average: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

/// Nearest-rank percentile of an ascending slice: the value at rank `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

impl Aggregates {
    pub fn from_latencies(latencies: &[f64]) -> Self {
        if latencies.is_empty() {
            return Self::default();
        }
        let mut sorted = latencies.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            count: sorted.len(),
            average: latencies.iter().sum::<f64>() / latencies.len() as f64,
            p50: nearest_rank(&sorted, 50.0),
            p90: nearest_rank(&sorted, 90.0),
            p99: nearest_rank(&sorted, 99.0),
            max: *sorted.last().expect("non-empty"),
        }
    }

    pub fn from_traces(traces: &[RequestTrace]) -> Self {
        Self::from_latencies(&traces.iter().map(RequestTrace::latency).collect::<Vec<_>>())
    }
}

/// Average seconds per request spent in each phase.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub waiting: f64,
    pub retrieval: f64,
    pub generation: f64,
}

impl Breakdown {
    pub fn from_traces(traces: &[RequestTrace]) -> Self {
        if traces.is_empty() {
            return Self::default();
        }
        let n = traces.len() as f64;
        let avg = |f: fn(&RequestTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
        Self {
            waiting: avg(RequestTrace::waiting),
            retrieval: avg(RequestTrace::retrieval),
            generation: avg(RequestTrace::generation),
        }
    }

    pub fn total(&self) -> f64 {
        self.waiting + self.retrieval + self.generation
    }
}

/// Per-interval averages for a declared schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub start: f64,
    pub end: f64,
    pub requests: usize,
    pub average_latency: f64,
    pub generation_batches: usize,
    pub mean_chosen_batch: f64,
}

/// Requests are assigned by arrival time, generation batches by start time.
pub fn interval_stats(outcome: &SimOutcome, schedule: &IntervalSchedule) -> Vec<IntervalStats> {
    let batches = outcome.generation_batches();
    schedule
        .spans()
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| {
            let last = i + 1 == schedule.intervals.len();
            let inside = |t: f64| t >= start && (t < end || last);
            let lat: Vec<f64> = outcome
                .traces
                .iter()
                .filter(|t| inside(t.arrival))
                .map(RequestTrace::latency)
                .collect();
            let chosen: Vec<u32> = batches.iter().filter(|(t, _)| inside(*t)).map(|&(_, b)| b).collect();
            IntervalStats {
                start,
                end,
                requests: lat.len(),
                average_latency: if lat.is_empty() { 0.0 } else { lat.iter().sum::<f64>() / lat.len() as f64 },
                generation_batches: chosen.len(),
                mean_chosen_batch: if chosen.is_empty() {
                    0.0
                } else {
                    chosen.iter().map(|&b| b as f64).sum::<f64>() / chosen.len() as f64
                },
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: SimMode,
    pub workload_digest: String,
    pub requests: usize,
    pub makespan: f64,
    pub aggregates: Aggregates,
    pub breakdown: Breakdown,
    pub generation_batches: usize,
    pub mean_generation_batch: f64,
    pub peak_occupancy: TierUsage,
    pub memory_violations: usize,
}

impl Summary {
    pub fn from_outcome(o: &SimOutcome) -> Self {
        let batches = o.generation_batches();
        Self {
            mode: o.mode,
            workload_digest: o.workload_digest.clone(),
            requests: o.traces.len(),
            makespan: o.traces.iter().map(|t| t.completion).fold(0.0, f64::max),
            aggregates: o.aggregates,
            breakdown: o.breakdown,
            generation_batches: batches.len(),
            mean_generation_batch: if batches.is_empty() {
                0.0
            } else {
                batches.iter().map(|&(_, b)| b as f64).sum::<f64>() / batches.len() as f64
            },
            peak_occupancy: o.peak_occupancy,
            memory_violations: o.memory_violations,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}

/// Text table of latency aggregates and the phase breakdown.
pub fn metrics_report(outcome: &SimOutcome) -> String {
    let a = &outcome.aggregates;
    let b = &outcome.breakdown;
    let p = &outcome.peak_occupancy;
    let mut s = String::new();
    let _ = writeln!(s, "mode: {}", outcome.mode);
    let _ = writeln!(s, "requests: {}", a.count);
    let _ = writeln!(s, "latency (s)   average    p50        p90        p99        max");
    let _ = writeln!(
        s,
        "              {:<10.3} {:<10.3} {:<10.3} {:<10.3} {:.3}",
        a.average, a.p50, a.p90, a.p99, a.max
    );
    let _ = writeln!(s, "breakdown (s) waiting    retrieval  generation total");
    let _ = writeln!(
        s,
        "              {:<10.3} {:<10.3} {:<10.3} {:.3}",
        b.waiting,
        b.retrieval,
        b.generation,
        b.total()
    );
    let _ = writeln!(
        s,
        "peak memory   gpu {}, cpu {}, disk {}; violations {}",
        Gib(p.gpu),
        Gib(p.cpu),
        Gib(p.disk),
        outcome.memory_violations
    );
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDelta {
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `a / b`; `None` when `b` is zero and `a` is not.
    pub ratio: Option<f64>,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a_mode: SimMode,
    pub b_mode: SimMode,
    pub metrics: Vec<MetricDelta>,
    /// Which side has the lower average latency: "a", "b" or "tie".
    pub dominant: String,
    /// `b.average / a.average`.
    pub speedup: Option<f64>,
}

fn ratio(a: f64, b: f64) -> Option<f64> {
    if a == b {
        Some(1.0)
    } else if b == 0.0 {
        None
    } else {
        Some(a / b)
    }
}

pub fn compare(a: &Summary, b: &Summary) -> Result<Comparison, SimError> {
    if a.workload_digest != b.workload_digest || a.requests != b.requests {
        return Err(SimError::WorkloadMismatch(format!(
            "{} requests ({}) vs {} requests ({})",
            a.requests,
            &a.workload_digest[..a.workload_digest.len().min(12)],
            b.requests,
            &b.workload_digest[..b.workload_digest.len().min(12)]
        )));
    }
    let rows = [
        ("average", a.aggregates.average, b.aggregates.average),
        ("p50", a.aggregates.p50, b.aggregates.p50),
        ("p90", a.aggregates.p90, b.aggregates.p90),
        ("p99", a.aggregates.p99, b.aggregates.p99),
        ("max", a.aggregates.max, b.aggregates.max),
        ("waiting", a.breakdown.waiting, b.breakdown.waiting),
        ("retrieval", a.breakdown.retrieval, b.breakdown.retrieval),
        ("generation", a.breakdown.generation, b.breakdown.generation),
        ("makespan", a.makespan, b.makespan),
    ];
    let metrics = rows
        .iter()
        .map(|&(metric, x, y)| MetricDelta {
            metric: metric.to_string(),
            a: x,
            b: y,
            ratio: ratio(x, y),
            delta: x - y,
        })
        .collect();
    let dominant = match a.aggregates.average.total_cmp(&b.aggregates.average) {
        std::cmp::Ordering::Less => "a",
        std::cmp::Ordering::Greater => "b",
        std::cmp::Ordering::Equal => "tie",
    };
    Ok(Comparison {
        a_mode: a.mode,
        b_mode: b.mode,
        metrics,
        dominant: dominant.to_string(),
        speedup: ratio(b.aggregates.average, a.aggregates.average),
    })
}

impl Comparison {
    pub fn ratio_of(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).and_then(|m| m.ratio)
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<12} {:>14} {:>14} {:>10} {:>14}", "metric", self.a_mode, self.b_mode, "a/b", "a-b");
        for m in &self.metrics {
            let r = m.ratio.map_or_else(|| "n/a".to_string(), |r| format!("{r:.4}"));
            let _ = writeln!(s, "{:<12} {:>14.3} {:>14.3} {:>10} {:>14.3}", m.metric, m.a, m.b, r, m.delta);
        }
        let speedup = self.speedup.map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}x"));
        let _ = writeln!(s, "lower average latency: {} (speedup of a over b: {speedup})", self.dominant);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("comparison serializes")
    }
}
