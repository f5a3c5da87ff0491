//! Capacity checks for placement configurations, grid enumeration of the
//! feasible ones, and the cost of moving between two placements.
//!
//! Per-tier usage for a placement `cfg` at batch size `B`:
//!
//! ```text
//! gpu  = w_gpu  * W + c_gpu  * C(B) + H(B)
//! cpu  = w_cpu  * W + c_cpu  * C(B) + P * M_p
//! disk = w_disk * W + c_disk * C(B) + (N_p - P) * M_p
//! ```

use crate::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, TierSplit};
use serde::{Deserialize, Serialize};
use std::ops::Add;

/// Bytes held on each device.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TierUsage {
    pub gpu: f64,
    pub cpu: f64,
    pub disk: f64,
}

impl TierUsage {
    pub fn max(self, other: TierUsage) -> TierUsage {
        TierUsage {
            gpu: self.gpu.max(other.gpu),
            cpu: self.cpu.max(other.cpu),
            disk: self.disk.max(other.disk),
        }
    }

    pub fn fits(&self, hw: &HardwareProfile) -> bool {
        self.gpu <= hw.gpu_mem as f64 && self.cpu <= hw.cpu_mem as f64 && self.disk <= hw.disk_capacity as f64
    }
}

impl Add for TierUsage {
    type Output = TierUsage;

    fn add(self, rhs: TierUsage) -> TierUsage {
        TierUsage {
            gpu: self.gpu + rhs.gpu,
            cpu: self.cpu + rhs.cpu,
            disk: self.disk + rhs.disk,
        }
    }
}

/// Bytes owned by the generation worker: weights, KV cache and workspace.
pub fn generation_usage(cfg: &PlacementConfig, model: &ModelProfile) -> TierUsage {
    let w = model.weight_total as f64;
    let kv = model.kv_cache_bytes(cfg.gen_batch_size);
    TierUsage {
        gpu: cfg.weights.gpu * w + cfg.cache.gpu * kv + model.workspace_bytes(cfg.gen_batch_size),
        cpu: cfg.weights.cpu * w + cfg.cache.cpu * kv,
        disk: cfg.weights.disk * w + cfg.cache.disk * kv,
    }
}

/// Bytes owned by the retrieval worker when `resident` partitions are cached.
pub fn partition_usage(resident: u32, db: &DatabaseProfile) -> TierUsage {
    let mp = db.partition_bytes as f64;
    TierUsage {
        gpu: 0.0,
        cpu: resident as f64 * mp,
        disk: db.num_partitions.saturating_sub(resident) as f64 * mp,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub gpu_used: f64,
    pub cpu_used: f64,
    pub disk_used: f64,
    pub gpu_slack: f64,
    pub cpu_slack: f64,
    pub disk_slack: f64,
}

impl FeasibilityReport {
    fn from_usage(usage: TierUsage, hw: &HardwareProfile) -> Self {
        let gpu_slack = hw.gpu_mem as f64 - usage.gpu;
        let cpu_slack = hw.cpu_mem as f64 - usage.cpu;
        let disk_slack = hw.disk_capacity as f64 - usage.disk;
        Self {
            feasible: gpu_slack >= 0.0 && cpu_slack >= 0.0 && disk_slack >= 0.0,
            gpu_used: usage.gpu,
            cpu_used: usage.cpu,
            disk_used: usage.disk,
            gpu_slack,
            cpu_slack,
            disk_slack,
        }
    }

    /// Name of the first constraint with negative slack, if any.
    pub fn binding(&self) -> Option<&'static str> {
        if self.gpu_slack < 0.0 {
            Some("gpu")
        } else if self.cpu_slack < 0.0 {
            Some("cpu")
        } else if self.disk_slack < 0.0 {
            Some("disk")
        } else {
            None
        }
    }
}

pub fn check_feasible(
    cfg: &PlacementConfig,
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
) -> FeasibilityReport {
    let usage = generation_usage(cfg, model) + partition_usage(cfg.resident_partitions, db);
    FeasibilityReport::from_usage(usage, hw)
}

/// Axes of the configuration grid explored by enumeration and profiling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementGrid {
    pub w_gpu: Vec<f64>,
    pub c_gpu: Vec<f64>,
    pub partitions: Vec<u32>,
    pub batches: Vec<u32>,
}

/// `0, step, 2*step, ..., 1` with exact endpoints.
pub fn fraction_steps(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as u32;
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

impl PlacementGrid {
    /// Fractions in steps of 0.05, every partition count, batches in powers of two up to 128.
    pub fn default_for(db: &DatabaseProfile) -> Self {
        Self {
            w_gpu: fraction_steps(0.05),
            c_gpu: fraction_steps(0.05),
            partitions: (0..=db.num_partitions).collect(),
            batches: (0..=7).map(|e| 1u32 << e).collect(),
        }
    }

    pub fn with_batches(mut self, batches: Vec<u32>) -> Self {
        self.batches = batches;
        self
    }
}

/// Below-`x` float so that `x * scale` does not exceed `limit`.
fn fraction_within(limit: f64, scale: f64, cap: f64) -> f64 {
    if scale <= 0.0 {
        return cap;
    }
    let mut f = (limit.max(0.0) / scale).min(cap);
    while f > 0.0 && f * scale > limit {
        f = f.next_down();
    }
    f
}

/// Completes a placement from its GPU shares: the remaining weights go to
/// host memory as far as it has room after the resident partitions, then the
/// remaining KV cache does the same, and whatever is left spills to disk.
pub fn fill_placement(
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    w_gpu: f64,
    c_gpu: f64,
    resident_partitions: u32,
    batch: u32,
) -> PlacementConfig {
    let w = model.weight_total as f64;
    let kv = model.kv_cache_bytes(batch);
    let cpu_free = hw.cpu_mem as f64 - partition_usage(resident_partitions, db).cpu;
    let w_cpu = fraction_within(cpu_free, w, 1.0 - w_gpu);
    let c_cpu = fraction_within(cpu_free - w_cpu * w, kv, 1.0 - c_gpu);
    PlacementConfig::new(
        TierSplit::spill_to_disk(w_gpu, w_cpu),
        TierSplit::spill_to_disk(c_gpu, c_cpu),
        resident_partitions,
        batch,
    )
}

/// Feasible grid points, ordered by `(B, P, w_gpu, c_gpu)`.
///
/// An empty result means the scenario has no feasible placement on this grid.
pub fn enumerate_feasible(
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    grid: &PlacementGrid,
) -> Vec<PlacementConfig> {
    let sorted_f = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    };
    let sorted_u = |v: &[u32]| {
        let mut v = v.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (w_axis, c_axis) = (sorted_f(&grid.w_gpu), sorted_f(&grid.c_gpu));
    let (p_axis, b_axis) = (sorted_u(&grid.partitions), sorted_u(&grid.batches));

    let mut out = Vec::new();
    for &b in &b_axis {
        for &p in p_axis.iter().filter(|&&p| p <= db.num_partitions) {
            for &wg in &w_axis {
                for &cg in &c_axis {
                    let cfg = fill_placement(hw, model, db, wg, cg, p, b);
                    if check_feasible(&cfg, hw, model, db).feasible {
                        out.push(cfg);
                    }
                }
            }
        }
    }
    out
}

/// Explains why no placement at batch `batch` can fit.
pub fn binding_constraint(hw: &HardwareProfile, model: &ModelProfile, db: &DatabaseProfile, batch: u32) -> String {
    let workspace = model.workspace_bytes(batch);
    if workspace > hw.gpu_mem as f64 {
        return format!(
            "GPU constraint binding at workspace: H({batch}) = {} exceeds gpu_mem = {}",
            crate::units::Gib(workspace),
            crate::units::Gib(hw.gpu_mem as f64)
        );
    }
    let total = model.weight_total as f64 + model.kv_cache_bytes(batch) + db.total_bytes() as f64 + workspace;
    let capacity = (hw.gpu_mem + hw.cpu_mem + hw.disk_capacity) as f64;
    if total > capacity {
        return format!(
            "disk constraint binding at capacity: {} of weights, cache, workspace and partitions exceed {} across all tiers",
            crate::units::Gib(total),
            crate::units::Gib(capacity)
        );
    }
    format!("no grid point fits at B = {batch}; refine the placement grid")
}

/// History of weight bytes that already have an on-disk copy.
///
/// Weights are ordered canonically with the disk share occupying the tail,
/// so the set of ever-offloaded tensors is the tail `[1 - high_water, 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiskResidency {
    high_water: f64,
}

impl DiskResidency {
    pub fn new() -> Self {
        Self::default()
    }

    /// Offloaded fraction already covered by an existing disk copy.
    pub fn covered(&self) -> f64 {
        self.high_water
    }

    pub fn record(&mut self, cfg: &PlacementConfig) {
        self.high_water = self.high_water.max(cfg.weights.disk);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub bytes_gpu_cpu: f64,
    pub bytes_cpu_disk: f64,
    pub first_time_disk_offload: f64,
    pub duration: f64,
}

/// Fraction flows between tiers that realise a weight re-split.
#[derive(Debug, Clone, Copy, Default)]
struct Flows {
    gpu_cpu: f64,
    cpu_disk: f64,
    gpu_disk: f64,
}

fn weight_flows(old: &TierSplit, new: &TierSplit) -> Flows {
    let src = |o: f64, n: f64| (o - n).max(0.0);
    let dst = |o: f64, n: f64| (n - o).max(0.0);
    let (mut sg, mut sc, mut sd) = (src(old.gpu, new.gpu), src(old.cpu, new.cpu), src(old.disk, new.disk));
    let (mut dg, mut dc, mut dd) = (dst(old.gpu, new.gpu), dst(old.cpu, new.cpu), dst(old.disk, new.disk));
    let take = |s: &mut f64, d: &mut f64| {
        let m = s.min(*d);
        *s -= m;
        *d -= m;
        m
    };
    let gpu_cpu = take(&mut sg, &mut dc) + take(&mut sc, &mut dg);
    let cpu_disk = take(&mut sc, &mut dd) + take(&mut sd, &mut dc);
    let gpu_disk = take(&mut sg, &mut dd) + take(&mut sd, &mut dg);
    Flows {
        gpu_cpu,
        cpu_disk,
        gpu_disk,
    }
}

/// Bytes and time needed to go from placement `old` to `new`.
///
/// The KV cache is rebuilt for every generation, so it never moves. Weight
/// tensors that were written to disk before are not written again.
pub fn plan_transfer(
    old: &PlacementConfig,
    new: &PlacementConfig,
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    history: &DiskResidency,
) -> TransferPlan {
    let w = model.weight_total as f64;
    let flows = weight_flows(&old.weights, &new.weights);

    let gained_on_disk = (new.weights.disk - old.weights.disk).max(0.0);
    let first_time = (new.weights.disk - old.weights.disk.max(history.covered())).max(0.0);
    let reused = gained_on_disk - first_time;

    let weight_disk_link = (flows.cpu_disk + flows.gpu_disk - reused).max(0.0) * w;
    let partition_link = old.resident_partitions.abs_diff(new.resident_partitions) as f64 * db.partition_bytes as f64;

    let bytes_gpu_cpu = (flows.gpu_cpu + flows.gpu_disk) * w;
    let bytes_cpu_disk = weight_disk_link + partition_link;
    TransferPlan {
        bytes_gpu_cpu,
        bytes_cpu_disk,
        first_time_disk_offload: first_time * w,
        duration: bytes_gpu_cpu / hw.bw_gpu_cpu + bytes_cpu_disk / hw.bw_cpu_disk,
    }
}
