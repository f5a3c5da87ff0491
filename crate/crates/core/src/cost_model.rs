//! Stage latency models and the power-law batch cost `T(B) = a * B^c`.

use crate::domain::{DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig};
use crate::memory_planner::generation_usage;
use crate::prefetch::{queue_capacity, simulate_layer_timeline, Phase, PrefetchMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CostError {
    #[error("placement infeasible: {0}")]
    Infeasible(String),
    #[error("underdetermined fit: need at least 2 distinct batch sizes, got {0}")]
    Underdetermined(usize),
    #[error("invalid sample ({batch}, {time}): batch must be >= 1 and time > 0")]
    InvalidSample { batch: f64, time: f64 },
    #[error(transparent)]
    Timeline(#[from] crate::prefetch::TimelineError),
}

/// Seconds for one retrieval batch with `resident` partitions cached.
///
/// Every partition is searched; the ones not resident are loaded first and
/// released afterwards. Independent of the retrieval batch size.
pub fn retrieval_time(resident: u32, db: &DatabaseProfile) -> f64 {
    let resident = resident.min(db.num_partitions);
    let streamed = db.num_partitions - resident;
    resident as f64 * db.search_seconds_per_partition
        + streamed as f64 * (db.load_seconds_per_partition + db.search_seconds_per_partition)
}

/// Multiplicative compute noise: lognormal with unit mean.
#[derive(Debug)]
pub struct Jitter {
    sigma: f64,
    rng: Option<ChaCha8Rng>,
}

impl Jitter {
    pub fn new(sigma: f64, seed: u64) -> Self {
        let rng = (sigma > 0.0).then(|| ChaCha8Rng::seed_from_u64(seed));
        Self { sigma, rng }
    }

    pub fn none() -> Self {
        Self { sigma: 0.0, rng: None }
    }

    pub fn sample(&mut self) -> f64 {
        match &mut self.rng {
            None => 1.0,
            Some(rng) => {
                let z: f64 = StandardNormal.sample(rng);
                (self.sigma * z - 0.5 * self.sigma * self.sigma).exp()
            }
        }
    }
}

/// Duration of one generation batch, split by phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenerationEstimate {
    pub prefill: f64,
    pub decode_step: f64,
    pub total: f64,
    pub prefill_stall: f64,
    pub decode_stall: f64,
}

/// Seconds to move one layer's offloaded weights and KV traffic to the GPU.
fn per_layer_transfer(cfg: &PlacementConfig, hw: &HardwareProfile, model: &ModelProfile, batch: u32) -> f64 {
    let via_host = 1.0 / hw.bw_gpu_cpu;
    let via_disk = 1.0 / hw.bw_cpu_disk + 1.0 / hw.bw_gpu_cpu;
    let weights = model.per_layer_weight() * (cfg.weights.cpu * via_host + cfg.weights.disk * via_disk);
    let kv = model.kv_traffic_fraction * model.kv_cache_bytes(batch) / model.num_layers as f64;
    let cache = kv * (cfg.cache.cpu * via_host + cfg.cache.disk * via_disk);
    weights + cache
}

/// Per-layer compute and transfer seconds of one pass (the prefill, or a
/// single decode step) over `batch` requests.
pub fn layer_inputs(
    cfg: &PlacementConfig,
    batch: u32,
    hw: &HardwareProfile,
    model: &ModelProfile,
    phase: Phase,
    jitter: &mut Jitter,
) -> (Vec<f64>, Vec<f64>) {
    let layers = model.num_layers as usize;
    let b = batch.max(1) as f64;
    let base = match phase {
        Phase::Prefill => model.compute_prefill_per_layer * b,
        Phase::Decode => model.compute_decode_per_layer * b.powf(model.decode_batch_exponent),
    } * hw.gpu_layer_rate;
    let compute = (0..layers).map(|_| base * jitter.sample()).collect();
    (compute, vec![per_layer_transfer(cfg, hw, model, batch); layers])
}

/// Timeline-based generation cost for `batch` requests on placement `cfg`.
///
/// Memory is provisioned for `cfg.gen_batch_size`; `batch` may be smaller.
pub fn estimate_generation(
    cfg: &PlacementConfig,
    batch: u32,
    hw: &HardwareProfile,
    model: &ModelProfile,
    mode: PrefetchMode,
    jitter: &mut Jitter,
) -> Result<GenerationEstimate, CostError> {
    let usage = generation_usage(cfg, model);
    if !usage.fits(hw) {
        return Err(CostError::Infeasible(format!(
            "generation needs gpu={:.0} cpu={:.0} disk={:.0} bytes",
            usage.gpu, usage.cpu, usage.disk
        )));
    }
    let (prefill_compute, transfer) = layer_inputs(cfg, batch, hw, model, Phase::Prefill, jitter);
    let prefill = simulate_layer_timeline(
        &prefill_compute,
        &transfer,
        queue_capacity(cfg, hw, model, Phase::Prefill),
        mode,
    )?;
    let (decode_compute, transfer) = layer_inputs(cfg, batch, hw, model, Phase::Decode, jitter);
    let decode = simulate_layer_timeline(
        &decode_compute,
        &transfer,
        queue_capacity(cfg, hw, model, Phase::Decode),
        mode,
    )?;

    let tokens = model.output_tokens as f64;
    Ok(GenerationEstimate {
        prefill: prefill.total,
        decode_step: decode.total,
        total: prefill.total + tokens * decode.total,
        prefill_stall: prefill.total_stall,
        decode_stall: decode.total_stall,
    })
}

/// Seconds for a full batch of `cfg.gen_batch_size` requests.
pub fn generation_time(
    cfg: &PlacementConfig,
    hw: &HardwareProfile,
    model: &ModelProfile,
    mode: PrefetchMode,
    seed: u64,
) -> Result<f64, CostError> {
    let mut jitter = Jitter::new(hw.jitter_sigma, seed);
    estimate_generation(cfg, cfg.gen_batch_size, hw, model, mode, &mut jitter).map(|e| e.total)
}

/// Fitted `T(B) = a * B^c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModelFit {
    pub a: f64,
    pub c: f64,
    /// Root-mean-square error of the fit in log space.
    pub residual: f64,
    pub sample_count: usize,
    /// The unconstrained slope was negative and `c` was clamped to 0.
    #[serde(default)]
    pub clamped: bool,
}

impl CostModelFit {
    pub fn new(a: f64, c: f64) -> Self {
        Self {
            a,
            c,
            residual: 0.0,
            sample_count: 0,
            clamped: false,
        }
    }

    pub fn predict(&self, batch: f64) -> f64 {
        predict(self, batch)
    }
}

pub fn predict(fit: &CostModelFit, batch: f64) -> f64 {
    fit.a * batch.powf(fit.c)
}

/// Unweighted least squares on `ln T = ln a + c ln B`, with `c >= 0`.
pub fn fit_power_law(samples: &[(f64, f64)]) -> Result<CostModelFit, CostError> {
    for &(batch, time) in samples {
        if !(batch >= 1.0 && time > 0.0 && batch.is_finite() && time.is_finite()) {
            return Err(CostError::InvalidSample { batch, time });
        }
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(CostError::Underdetermined(distinct.len()));
    }

    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let ys: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();

    let mut c = sxy / sxx;
    let mut ln_a = my - c * mx;
    let clamped = c < 0.0;
    if clamped {
        c = 0.0;
        ln_a = my;
    }
    let sse: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - ln_a - c * x).powi(2)).sum();
    Ok(CostModelFit {
        a: ln_a.exp(),
        c,
        residual: (sse / n).sqrt(),
        sample_count: samples.len(),
        clamped,
    })
}
