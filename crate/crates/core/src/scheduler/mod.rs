//! Batch-size selection for the two pipelines.
//!
//! Generation batches are chosen online from the backlog using the
//! equal-split latency model: serving `n` queued requests as `k` batches of
//! `n / k` costs, in average latency,
//!
//! ```text
//! L_k = (k + 1) / 2 * T(n / k) - mean(t_i)
//! ```
//!
//! where `t_i` are arrival times relative to the decision instant. One big
//! batch wins over `k` splits exactly when `2 * k^c <= k + 1`.
//!
//! Retrieval batches greedily drain the queue. The offline side lives in
//! [`profiler`].

pub mod profiler;

pub use profiler::{active_profile, PolicyEntry, PolicyTable, ProfileError, ProfileOptions, SearchStep};

use crate::cost_model::CostModelFit;
use crate::domain::Request;
use serde::{Deserialize, Serialize};

/// Relative tolerance under which two predicted latencies count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScheduleError {
    #[error("split count {k} must be in 1..={n}")]
    InvalidSplit { k: u32, n: u32 },
    #[error("empty backlog")]
    EmptyBacklog,
    #[error("arrival list has {got} entries for a backlog of {n}")]
    ArrivalCount { got: usize, n: u32 },
    #[error("no feasible batch: candidates {candidates:?} all exceed the limit {limit}")]
    NoFeasibleBatch { candidates: Vec<u32>, limit: u32 },
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Average latency of `k` back-to-back batches of `batch` requests each.
fn split_cost(k: u32, batch: f64, fit: &CostModelFit) -> f64 {
    (k as f64 + 1.0) / 2.0 * fit.predict(batch)
}

/// Predicted average latency when the `n` backlogged requests are served as
/// `k` equal batches. `arrivals` are relative to the decision instant.
///
/// When `k` does not divide `n` the batches are sized `ceil(n / k)`.
pub fn avg_latency_equal_split(n: u32, arrivals: &[f64], k: u32, fit: &CostModelFit) -> Result<f64, ScheduleError> {
    if n == 0 {
        return Err(ScheduleError::EmptyBacklog);
    }
    if k < 1 || k > n {
        return Err(ScheduleError::InvalidSplit { k, n });
    }
    if arrivals.len() != n as usize {
        return Err(ScheduleError::ArrivalCount { got: arrivals.len(), n });
    }
    let batch = if n.is_multiple_of(k) {
        (n / k) as f64
    } else {
        n.div_ceil(k) as f64
    };
    Ok(split_cost(k, batch, fit) - mean(arrivals))
}

/// Whether a single batch of everything beats `k` equal splits for exponent `c`.
pub fn max_batch_optimal(c: f64, k: u32) -> bool {
    let k = k as f64;
    2.0 * k.powf(c) <= k + 1.0 + 1e-12
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchDecision {
    pub chosen_batch: u32,
    pub predicted_avg_latency: f64,
    pub evaluated: Vec<(u32, f64)>,
}

/// Picks the generation batch size for the current backlog.
///
/// Candidates above `max_feasible`, or above the smallest candidate that
/// already covers the whole backlog, are discarded. Each remaining `b` is
/// scored with `k = ceil(n / b)` batches of size `b`; the lowest predicted
/// latency wins and ties go to the larger batch.
pub fn choose_generation_batch(
    backlog: &[Request],
    now: f64,
    candidates: &[u32],
    fit: &CostModelFit,
    max_feasible: u32,
) -> Result<BatchDecision, ScheduleError> {
    if backlog.is_empty() {
        return Err(ScheduleError::EmptyBacklog);
    }
    let n = backlog.len() as u32;
    let mut sorted: Vec<u32> = candidates.iter().copied().filter(|&b| b > 0).collect();
    sorted.sort_unstable();
    sorted.dedup();
    let cover = sorted.iter().copied().find(|&b| b >= n).unwrap_or(u32::MAX);
    let limit = max_feasible.min(cover);
    let usable: Vec<u32> = sorted.iter().copied().filter(|&b| b <= limit).collect();
    if usable.is_empty() {
        return Err(ScheduleError::NoFeasibleBatch {
            candidates: sorted,
            limit,
        });
    }

    let waited = mean(&backlog.iter().map(|r| r.arrival_time - now).collect::<Vec<_>>());
    let mut evaluated = Vec::with_capacity(usable.len());
    let mut best: Option<(u32, f64)> = None;
    for &b in &usable {
        let k = n.div_ceil(b);
        let cost = split_cost(k, b as f64, fit);
        evaluated.push((b, cost - waited));
        match best {
            Some((_, best_cost)) if cost > best_cost * (1.0 + TIE_TOLERANCE) => {}
            _ => best = Some((b, cost)),
        }
    }
    let (chosen_batch, cost) = best.expect("usable is non-empty");
    Ok(BatchDecision {
        chosen_batch,
        predicted_avg_latency: cost - waited,
        evaluated,
    })
}

/// Retrieval drains as much of its queue as one batch may hold.
pub fn choose_retrieval_batch(backlog: usize, max_retrieval_batch: usize) -> usize {
    backlog.min(max_retrieval_batch.max(1))
}
