//! Offline active profiling.
//!
//! For every probe batch size the profiler starts from the most GPU-resident
//! feasible placement and hill-climbs on the number of resident partitions,
//! trading host memory between database partitions and model weights, until
//! the pipeline bottleneck `max(t_retrieval, t_generation)` stops improving.
//! Each resulting placement gets its own fitted `T(B)`.

use crate::cost_model::{estimate_generation, fit_power_law, retrieval_time, CostError, CostModelFit, Jitter};
use crate::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, TierSplit};
use crate::memory_planner::{
    binding_constraint, check_feasible, enumerate_feasible, fill_placement, fraction_steps, generation_usage,
    PlacementGrid,
};
use crate::prefetch::PrefetchMode;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("scenario infeasible at B = {batch}: {reason}")]
    Infeasible { batch: u32, reason: String },
    #[error("probe batch list is empty")]
    NoProbeBatches,
    #[error("partition candidate list is empty")]
    NoPartitionCandidates,
    #[error(transparent)]
    Cost(#[from] CostError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub prefetch_mode: PrefetchMode,
    /// Grid step for `w_gpu` and `c_gpu`.
    pub fraction_step: f64,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        Self {
            prefetch_mode: PrefetchMode::ContinuousQueue,
            fraction_step: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchStep {
    pub placement: PlacementConfig,
    pub retrieval_seconds: f64,
    pub generation_seconds: f64,
    pub objective: f64,
}

/// Placement used while the generation backlog lies in
/// `min_backlog..=max_backlog` (`None` means unbounded).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEntry {
    pub min_backlog: u32,
    pub max_backlog: Option<u32>,
    pub placement: PlacementConfig,
    pub fit: CostModelFit,
    pub retrieval_seconds: f64,
    pub generation_seconds: f64,
    pub search_path: Vec<SearchStep>,
}

impl PolicyEntry {
    pub fn covers(&self, backlog: u32) -> bool {
        backlog >= self.min_backlog && self.max_backlog.is_none_or(|m| backlog <= m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub entries: Vec<PolicyEntry>,
}

impl PolicyTable {
    /// Entry whose backlog range contains `backlog` (backlogs below 1 map to the first).
    pub fn lookup(&self, backlog: u32) -> Option<(usize, &PolicyEntry)> {
        let backlog = backlog.max(1);
        self.entries.iter().enumerate().find(|(_, e)| e.covers(backlog))
    }

    /// Ranges must start at 1, be contiguous and end unbounded.
    pub fn check_ranges(&self) -> Result<(), String> {
        let mut next = 1u32;
        for (i, e) in self.entries.iter().enumerate() {
            if e.min_backlog != next {
                return Err(format!("entry {i} starts at {} instead of {next}", e.min_backlog));
            }
            match e.max_backlog {
                Some(m) if m < e.min_backlog => return Err(format!("entry {i} has an empty range")),
                Some(m) => next = m + 1,
                None if i + 1 == self.entries.len() => return Ok(()),
                None => return Err(format!("entry {i} is unbounded but not last")),
            }
        }
        Err("last entry must be unbounded".into())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy table serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Expected (jitter-free) generation seconds.
fn expected_generation(
    cfg: &PlacementConfig,
    batch: u32,
    hw: &HardwareProfile,
    model: &ModelProfile,
    mode: PrefetchMode,
) -> Result<f64, CostError> {
    Ok(estimate_generation(cfg, batch, hw, model, mode, &mut Jitter::none())?.total)
}

fn evaluate(
    cfg: PlacementConfig,
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    mode: PrefetchMode,
) -> Result<SearchStep, CostError> {
    let retrieval_seconds = retrieval_time(cfg.resident_partitions, db);
    let generation_seconds = expected_generation(&cfg, cfg.gen_batch_size, hw, model, mode)?;
    Ok(SearchStep {
        placement: cfg,
        retrieval_seconds,
        generation_seconds,
        objective: retrieval_seconds.max(generation_seconds),
    })
}

/// Ordering key for "most GPU resident": GPU bytes, then weight share on GPU,
/// then as little weight and cache on disk as possible, then more partitions.
fn residency_cmp(a: &PlacementConfig, b: &PlacementConfig, model: &ModelProfile) -> Ordering {
    let ga = generation_usage(a, model).gpu;
    let gb = generation_usage(b, model).gpu;
    ga.total_cmp(&gb)
        .then(a.weights.gpu.total_cmp(&b.weights.gpu))
        .then(b.weights.disk.total_cmp(&a.weights.disk))
        .then(b.cache.disk.total_cmp(&a.cache.disk))
        .then(a.resident_partitions.cmp(&b.resident_partitions))
}

/// Re-splits `cfg` for a new partition count, keeping the GPU shares. Weight
/// bytes that no longer fit in host memory go to spare GPU memory first and
/// to disk after that.
fn neighbor(
    cfg: &PlacementConfig,
    resident: u32,
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
) -> PlacementConfig {
    let b = cfg.gen_batch_size;
    let mut next = fill_placement(hw, model, db, cfg.weights.gpu, cfg.cache.gpu, resident, b);
    if next.weights.disk > 0.0 {
        let slack = hw.gpu_mem as f64 - generation_usage(&next, model).gpu;
        if slack > 0.0 {
            let moved = next.weights.disk.min(slack / model.weight_total as f64);
            let mut gpu = next.weights.gpu + moved;
            while gpu > next.weights.gpu && (gpu - next.weights.gpu) * model.weight_total as f64 > slack {
                gpu = gpu.next_down();
            }
            next.weights = TierSplit::spill_to_disk(gpu, next.weights.cpu);
        }
    }
    next
}

fn hill_climb(
    start: PlacementConfig,
    partitions: &[u32],
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    mode: PrefetchMode,
) -> Result<Vec<SearchStep>, CostError> {
    let mut path = vec![evaluate(start, hw, model, db, mode)?];
    loop {
        let current = path.last().expect("path starts non-empty");
        let p = current.placement.resident_partitions;
        let target = match current.retrieval_seconds.total_cmp(&current.generation_seconds) {
            Ordering::Greater => partitions.iter().copied().find(|&q| q > p),
            Ordering::Less => partitions.iter().rev().copied().find(|&q| q < p),
            Ordering::Equal => None,
        };
        let Some(target) = target else { break };
        let candidate = neighbor(&current.placement, target, hw, model, db);
        if !check_feasible(&candidate, hw, model, db).feasible {
            break;
        }
        let step = evaluate(candidate, hw, model, db, mode)?;
        if step.objective >= current.objective {
            break;
        }
        path.push(step);
    }
    Ok(path)
}

/// Batch sizes sampled to fit `T(B)` for a placement provisioned for `batch`.
fn fit_batches(batch: u32) -> Vec<u32> {
    if batch <= 1 {
        return vec![1, 2];
    }
    let mut v: Vec<u32> = [batch / 8, batch / 4, batch / 2, batch].into_iter().map(|b| b.max(1)).collect();
    v.dedup();
    v
}

/// Builds a policy table covering backlogs `[1, inf)`, one entry per
/// feasible probe batch size.
pub fn active_profile(
    hw: &HardwareProfile,
    model: &ModelProfile,
    db: &DatabaseProfile,
    probe_batches: &[u32],
    partition_candidates: &[u32],
    options: &ProfileOptions,
) -> Result<PolicyTable, ProfileError> {
    let mut probes: Vec<u32> = probe_batches.iter().copied().filter(|&b| b > 0).collect();
    probes.sort_unstable();
    probes.dedup();
    if probes.is_empty() {
        return Err(ProfileError::NoProbeBatches);
    }
    let mut partitions: Vec<u32> = partition_candidates
        .iter()
        .copied()
        .filter(|&p| p <= db.num_partitions)
        .collect();
    partitions.sort_unstable();
    partitions.dedup();
    if partitions.is_empty() {
        return Err(ProfileError::NoPartitionCandidates);
    }

    let steps = fraction_steps(options.fraction_step);
    let mut entries: Vec<PolicyEntry> = Vec::new();
    for &batch in &probes {
        let grid = PlacementGrid {
            w_gpu: steps.clone(),
            c_gpu: steps.clone(),
            partitions: partitions.clone(),
            batches: vec![batch],
        };
        let feasible = enumerate_feasible(hw, model, db, &grid);
        let Some(start) = feasible.iter().copied().max_by(|a, b| residency_cmp(a, b, model)) else {
            if entries.is_empty() {
                return Err(ProfileError::Infeasible {
                    batch,
                    reason: binding_constraint(hw, model, db, batch),
                });
            }
            // larger batches only get harder to fit
            break;
        };

        let path = hill_climb(start, &partitions, hw, model, db, options.prefetch_mode)?;
        let best = path.last().expect("non-empty path").clone();
        let samples = fit_batches(batch)
            .into_iter()
            .map(|b| Ok((b as f64, expected_generation(&best.placement, b, hw, model, options.prefetch_mode)?)))
            .collect::<Result<Vec<_>, CostError>>()?;
        let fit = fit_power_law(&samples)?;

        if let Some(prev) = entries.last_mut() {
            prev.max_backlog = Some(prev.placement.gen_batch_size);
        }
        let min_backlog = entries.last().map_or(1, |e| e.placement.gen_batch_size + 1);
        entries.push(PolicyEntry {
            min_backlog,
            max_backlog: None,
            placement: best.placement,
            fit,
            retrieval_seconds: best.retrieval_seconds,
            generation_seconds: best.generation_seconds,
            search_path: path,
        });
    }
    Ok(PolicyTable { entries })
}
