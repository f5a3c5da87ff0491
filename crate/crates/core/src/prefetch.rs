//! Layer-granularity timeline of offloaded inference.
//!
//! One transfer channel fetches offloaded layers to the GPU while compute
//! executes layers strictly in order. Two prefetch disciplines are modelled:
//!
//! * [`PrefetchMode::NextLayerOnly`]: the fetch of layer `j + 1` is issued
//!   when layer `j` starts computing.
//! * [`PrefetchMode::ContinuousQueue`]: fetches are issued back to back while
//!   fewer than `capacity` fetched layers are waiting for compute.

use crate::domain::{HardwareProfile, ModelProfile, PlacementConfig};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrefetchMode {
    NextLayerOnly,
    ContinuousQueue,
}

impl std::str::FromStr for PrefetchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "next-layer-only" | "next-layer" => Ok(Self::NextLayerOnly),
            "continuous-queue" | "continuous" => Ok(Self::ContinuousQueue),
            other => Err(format!("unknown prefetch mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Prefill,
    Decode,
}

/// How many fetched layers may wait for compute at once.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum QueueCapacity {
    Bounded(u32),
    /// Nothing is offloaded, so the queue never fills.
    Unbounded,
}

impl QueueCapacity {
    pub fn as_limit(self) -> usize {
        match self {
            QueueCapacity::Bounded(n) => n.max(1) as usize,
            QueueCapacity::Unbounded => usize::MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TimelineError {
    #[error("compute has {compute} layers but transfer has {transfer}")]
    LengthMismatch { compute: usize, transfer: usize },
    #[error("layer {layer}: times must be finite and non-negative")]
    InvalidTime { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerSpan {
    pub transfer_start: f64,
    pub transfer_end: f64,
    pub compute_start: f64,
    pub compute_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTimeline {
    pub layers: Vec<LayerSpan>,
    pub total: f64,
    pub total_stall: f64,
}

impl LayerTimeline {
    /// One CSV row per layer; transfer columns are empty for resident layers.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,transfer_start,transfer_end,compute_start,compute_end\n");
        for (i, l) in self.layers.iter().enumerate() {
            if l.transfer_end > l.transfer_start {
                let _ = writeln!(
                    out,
                    "{i},{},{},{},{}",
                    l.transfer_start, l.transfer_end, l.compute_start, l.compute_end
                );
            } else {
                let _ = writeln!(out, "{i},,,{},{}", l.compute_start, l.compute_end);
            }
        }
        out
    }

    /// Structural invariants; returns a description of the first breach.
    pub fn check_invariants(&self) -> Result<(), String> {
        let mut prev_compute_end = 0.0_f64;
        let mut prev_transfer_end = 0.0_f64;
        let mut stall = 0.0;
        for (i, l) in self.layers.iter().enumerate() {
            let fetched = l.transfer_end > l.transfer_start;
            if fetched {
                if l.compute_start < l.transfer_end {
                    return Err(format!("layer {i} computes before its transfer ends"));
                }
                if l.transfer_start < prev_transfer_end {
                    return Err(format!("layer {i} transfer overlaps the previous one"));
                }
                prev_transfer_end = l.transfer_end;
                stall += (l.transfer_end - prev_compute_end).max(0.0);
            }
            if l.compute_start < prev_compute_end || l.compute_end < l.compute_start {
                return Err(format!("layer {i} compute is out of order"));
            }
            prev_compute_end = l.compute_end;
        }
        if self.total != prev_compute_end {
            return Err("total differs from last compute end".into());
        }
        if (self.total_stall - stall).abs() > 1e-12 * self.total.max(1.0) {
            return Err("stall accounting mismatch".into());
        }
        Ok(())
    }
}

/// Computes per-layer transfer and compute intervals for one forward step.
///
/// Layers with zero transfer time are GPU resident and never use the
/// channel. Compute of layer `j` starts at the later of the previous layer's
/// compute end and its own transfer end.
pub fn simulate_layer_timeline(
    compute: &[f64],
    transfer: &[f64],
    capacity: QueueCapacity,
    mode: PrefetchMode,
) -> Result<LayerTimeline, TimelineError> {
    if compute.len() != transfer.len() {
        return Err(TimelineError::LengthMismatch {
            compute: compute.len(),
            transfer: transfer.len(),
        });
    }
    for (i, (&c, &t)) in compute.iter().zip(transfer).enumerate() {
        if !(c.is_finite() && t.is_finite() && c >= 0.0 && t >= 0.0) {
            return Err(TimelineError::InvalidTime { layer: i });
        }
    }

    let limit = capacity.as_limit();
    let mut layers: Vec<LayerSpan> = Vec::with_capacity(compute.len());
    // compute_start of every fetched layer so far, in fetch order
    let mut fetched_starts: Vec<f64> = Vec::new();
    let mut channel_free = 0.0_f64;
    let mut prev_compute_end = 0.0_f64;
    let mut total_stall = 0.0;

    for j in 0..compute.len() {
        let (transfer_start, transfer_end) = if transfer[j] > 0.0 {
            let gate = match mode {
                PrefetchMode::NextLayerOnly => layers.last().map_or(0.0, |l| l.compute_start),
                PrefetchMode::ContinuousQueue => {
                    // the queue has room once the `limit`-th most recent fetch began computing
                    if fetched_starts.len() >= limit {
                        fetched_starts[fetched_starts.len() - limit]
                    } else {
                        0.0
                    }
                }
            };
            let start = channel_free.max(gate);
            let end = start + transfer[j];
            channel_free = end;
            total_stall += (end - prev_compute_end).max(0.0);
            (start, end)
        } else {
            (prev_compute_end, prev_compute_end)
        };

        let compute_start = prev_compute_end.max(transfer_end);
        let compute_end = compute_start + compute[j];
        if transfer[j] > 0.0 {
            fetched_starts.push(compute_start);
        }
        layers.push(LayerSpan {
            transfer_start,
            transfer_end,
            compute_start,
            compute_end,
        });
        prev_compute_end = compute_end;
    }

    Ok(LayerTimeline {
        layers,
        total: prev_compute_end,
        total_stall,
    })
}

/// Depth of the prefetch queue that fits in the GPU memory left over by the
/// resident weights, the KV cache and the phase's workspace.
pub fn queue_capacity(cfg: &PlacementConfig, hw: &HardwareProfile, model: &ModelProfile, phase: Phase) -> QueueCapacity {
    let per_layer_offloaded = (1.0 - cfg.weights.gpu) * model.per_layer_weight();
    if per_layer_offloaded <= 0.0 {
        return QueueCapacity::Unbounded;
    }
    let b = cfg.gen_batch_size;
    let workspace = match phase {
        Phase::Prefill => model.workspace_bytes(b),
        Phase::Decode => model.decode_workspace_fraction * model.workspace_bytes(b),
    };
    let free = hw.gpu_mem as f64
        - cfg.weights.gpu * model.weight_total as f64
        - cfg.cache.gpu * model.kv_cache_bytes(b)
        - workspace;
    let slots = (free / per_layer_offloaded).floor();
    QueueCapacity::Bounded(if slots.is_finite() && slots >= 1.0 {
        slots.min(u32::MAX as f64) as u32
    } else {
        1
    })
}
