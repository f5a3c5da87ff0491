//! Discrete-event replay of a workload through the pipelined system or the
//! serial baseline.
//!
//! Both modes share one single-threaded event loop. Simultaneous events are
//! processed in `(time, worker, sequence)` order, and all events at one
//! instant are applied before any worker picks up new work.

mod engine;
pub mod metrics;
pub mod output;

pub use metrics::{compare, interval_stats, metrics_report, Aggregates, Breakdown, Comparison, IntervalStats, MetricDelta, Summary};

use crate::cost_model::{estimate_generation, retrieval_time, CostError, Jitter};
use crate::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request, RequestTrace};
use crate::memory_planner::{enumerate_feasible, fraction_steps, PlacementGrid, TierUsage};
use crate::prefetch::PrefetchMode;
use crate::scheduler::{PolicyTable, ScheduleError};
use crate::workload::IntervalSchedule;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimMode {
    Pipelined,
    Serial,
}

impl SimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SimMode::Pipelined => "pipelined",
            SimMode::Serial => "serial",
        }
    }
}

impl std::fmt::Display for SimMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

impl std::str::FromStr for SimMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pipelined" => Ok(SimMode::Pipelined),
            "serial" => Ok(SimMode::Serial),
            other => Err(format!("unknown mode `{other}` (expected pipelined or serial)")),
        }
    }
}

/// Fixed placement and rate-proportional batching of the serial baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerialPolicy {
    pub placement: PlacementConfig,
    /// Declared arrival schedule used to size batches.
    pub schedule: IntervalSchedule,
    /// A batch holds the requests expected over this many seconds.
    pub window_seconds: f64,
    /// Upper bound on the serial batch size.
    pub max_batch: u32,
}

impl SerialPolicy {
    /// `max(1, round(window * rate(t)))`, capped at `max_batch`.
    pub fn batch_limit(&self, t: f64) -> usize {
        let expected = (self.window_seconds * self.schedule.rate_at(t)).round();
        (expected.max(1.0) as usize).min(self.max_batch.max(1) as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub mode: SimMode,
    pub hw: HardwareProfile,
    pub model: ModelProfile,
    pub db: DatabaseProfile,
    /// Required in pipelined mode.
    pub policy: Option<PolicyTable>,
    /// Required in serial mode.
    pub serial: Option<SerialPolicy>,
    pub prefetch_mode: PrefetchMode,
    pub max_retrieval_batch: usize,
    pub batch_candidates: Vec<u32>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("pipelined mode requires a non-empty policy table")]
    MissingPolicy,
    #[error("serial mode requires a serial policy")]
    MissingSerialPolicy,
    #[error("invalid policy table: {0}")]
    InvalidPolicy(String),
    #[error("policy entry {entry} is infeasible: {reason}")]
    InfeasibleEntry { entry: usize, reason: String },
    #[error("serial placement is infeasible: {0}")]
    InfeasibleSerial(String),
    #[error("workload is not sorted by arrival at index {0}")]
    UnsortedWorkload(usize),
    #[error("duplicate request id {0}")]
    DuplicateId(u64),
    #[error("workloads differ: {0}")]
    WorkloadMismatch(String),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Worker {
    Arrival = 0,
    Retrieval = 1,
    Generation = 2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Arrived {
        request: u64,
    },
    RetrievalBatched {
        requests: Vec<u64>,
        resident_partitions: u32,
        reconfig_seconds: f64,
        retrieval_seconds: f64,
    },
    RetrievalDone {
        requests: Vec<u64>,
    },
    GenerationBatched {
        requests: Vec<u64>,
        backlog: u32,
        chosen_batch: u32,
        entry: Option<usize>,
        reconfig_seconds: f64,
        generation_seconds: f64,
        predicted_avg_latency: Option<f64>,
    },
    Done {
        requests: Vec<u64>,
    },
    /// A residency change charged to one worker between its batches.
    Reconfigured {
        from_entry: Option<usize>,
        to_entry: Option<usize>,
        from_partitions: u32,
        to_partitions: u32,
        bytes_gpu_cpu: f64,
        bytes_cpu_disk: f64,
        seconds: f64,
    },
    /// The generation worker kept its placement because the desired one
    /// does not fit next to the retrieval worker's partitions.
    ReconfigDeferred {
        from_entry: usize,
        to_entry: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub seq: u64,
    pub worker: Worker,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub mode: SimMode,
    /// Sorted by request id.
    pub traces: Vec<RequestTrace>,
    pub aggregates: Aggregates,
    pub breakdown: Breakdown,
    pub events: Vec<Event>,
    pub peak_occupancy: TierUsage,
    pub memory_violations: usize,
    pub workload_digest: String,
}

impl SimOutcome {
    pub fn summary(&self) -> Summary {
        Summary::from_outcome(self)
    }

    /// `(time, chosen_batch)` of every generation batch.
    pub fn generation_batches(&self) -> Vec<(f64, u32)> {
        self.events
            .iter()
            .filter_map(|e| match &e.kind {
                EventKind::GenerationBatched { chosen_batch, .. } => Some((e.time, *chosen_batch)),
                _ => None,
            })
            .collect()
    }
}

/// SHA-256 over the ids and exact arrival times of a workload.
pub fn workload_digest(workload: &[Request]) -> String {
    let mut h = Sha256::new();
    for r in workload {
        h.update(r.id.to_le_bytes());
        h.update(r.arrival_time.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Placement for the serial baseline: the feasible grid point at `batch`
/// with the smallest `t_retrieval + t_generation`.
pub fn serial_placement(
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    batch: u32,
    partition_candidates: &[u32],
    fraction_step: f64,
    mode: PrefetchMode,
) -> Result<PlacementConfig, SimError> {
    let steps = fraction_steps(fraction_step);
    let grid = PlacementGrid {
        w_gpu: steps.clone(),
        c_gpu: steps,
        partitions: partition_candidates.to_vec(),
        batches: vec![batch],
    };
    let mut best: Option<(f64, PlacementConfig)> = None;
    for cfg in enumerate_feasible(hw, model, db, &grid) {
        let t = retrieval_time(cfg.resident_partitions, db)
            + estimate_generation(&cfg, batch, hw, model, mode, &mut Jitter::none())?.total;
        if best.is_none_or(|(b, _)| t < b) {
            best = Some((t, cfg));
        }
    }
    best.map(|(_, c)| c).ok_or_else(|| {
        SimError::InfeasibleSerial(crate::memory_planner::binding_constraint(hw, model, db, batch))
    })
}

/// Replays `workload` (sorted by arrival) under `cfg`.
pub fn run(workload: &[Request], cfg: &SimConfig) -> Result<SimOutcome, SimError> {
    let mut seen = std::collections::HashSet::with_capacity(workload.len());
    for (i, r) in workload.iter().enumerate() {
        if i > 0 && r.arrival_time < workload[i - 1].arrival_time {
            return Err(SimError::UnsortedWorkload(i));
        }
        if !seen.insert(r.id) {
            return Err(SimError::DuplicateId(r.id));
        }
    }
    let raw = engine::Engine::new(workload, cfg)?.run()?;
    let mut traces = raw.traces;
    traces.sort_by_key(|t| t.id);
    Ok(SimOutcome {
        mode: cfg.mode,
        aggregates: Aggregates::from_traces(&traces),
        breakdown: Breakdown::from_traces(&traces),
        traces,
        events: raw.events,
        peak_occupancy: raw.peak,
        memory_violations: raw.violations,
        workload_digest: workload_digest(workload),
    })
}
