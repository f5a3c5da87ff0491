//! Value types shared across the crate: hardware, model and database
//! descriptions, placement configurations, requests and their traces.
//!
//! Time is always seconds (`f64`), memory is bytes (`u64`), and tier
//! fractions are `f64` in `[0, 1]`.

use crate::units::{self, GIB, TIB};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Tolerance applied to every "fractions sum to one" check.
pub const FRACTION_TOLERANCE: f64 = 1e-9;

/// A single violated invariant, reported as data rather than an error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub observed: String,
    pub message: String,
}

impl Violation {
    fn new(field: &str, observed: impl fmt::Display, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            observed: observed.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = {}: {}", self.field, self.observed, self.message)
    }
}

/// Invariant checking for profiles and configurations.
pub trait Validate {
    /// Returns every violated invariant; an empty list means the value is valid.
    fn violations(&self) -> Vec<Violation>;

    fn validate(&self) -> Result<(), Vec<Violation>> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

fn require_positive(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !(v > 0.0 && v.is_finite()) {
        out.push(Violation::new(field, v, "must be > 0"));
    }
}

fn require_non_negative(out: &mut Vec<Violation>, field: &str, v: f64) {
    if !(v >= 0.0 && v.is_finite()) {
        out.push(Violation::new(field, v, "must be >= 0"));
    }
}

/// Device capacities, link bandwidths and compute characteristics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    #[serde(with = "units::bytes")]
    pub gpu_mem: u64,
    #[serde(with = "units::bytes")]
    pub cpu_mem: u64,
    #[serde(with = "units::bytes")]
    pub disk_capacity: u64,
    /// GPU <-> host link, bytes per second.
    #[serde(with = "units::bandwidth")]
    pub bw_gpu_cpu: f64,
    /// Host <-> disk link, bytes per second.
    #[serde(with = "units::bandwidth")]
    pub bw_cpu_disk: f64,
    /// Multiplier applied to the model's per-layer compute seconds
    /// (1.0 means the model's reference GPU).
    #[serde(default = "one")]
    pub gpu_layer_rate: f64,
    /// Log-scale standard deviation of multiplicative compute jitter.
    #[serde(default)]
    pub jitter_sigma: f64,
}

fn one() -> f64 {
    1.0
}

impl HardwareProfile {
    /// 24 GiB GPU, 256 GiB host memory, 8 TiB SSD.
    pub fn pf_high() -> Self {
        Self {
            gpu_mem: 24 * GIB,
            cpu_mem: 256 * GIB,
            disk_capacity: 8 * TIB,
            bw_gpu_cpu: (16 * GIB) as f64,
            bw_cpu_disk: (3 * GIB) as f64,
            gpu_layer_rate: 1.0,
            jitter_sigma: 0.05,
        }
    }

    /// 12 GiB GPU, 176 GiB host memory, 2 TiB SSD.
    pub fn pf_low() -> Self {
        Self {
            gpu_mem: 12 * GIB,
            cpu_mem: 176 * GIB,
            disk_capacity: 2 * TIB,
            bw_gpu_cpu: (8 * GIB) as f64,
            bw_cpu_disk: (2 * GIB) as f64,
            gpu_layer_rate: 1.25,
            jitter_sigma: 0.05,
        }
    }
}

impl Validate for HardwareProfile {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        require_positive(&mut out, "gpu_mem", self.gpu_mem as f64);
        require_positive(&mut out, "cpu_mem", self.cpu_mem as f64);
        require_positive(&mut out, "disk_capacity", self.disk_capacity as f64);
        require_positive(&mut out, "bw_gpu_cpu", self.bw_gpu_cpu);
        require_positive(&mut out, "bw_cpu_disk", self.bw_cpu_disk);
        require_positive(&mut out, "gpu_layer_rate", self.gpu_layer_rate);
        require_non_negative(&mut out, "jitter_sigma", self.jitter_sigma);
        out
    }
}

/// Size and per-layer cost description of the served LLM.
///
/// KV cache and workspace are linear in the batch size:
/// `C(B) = B * kv_bytes_per_request`, `H(B) = B * workspace_bytes_per_request`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub num_layers: u32,
    #[serde(with = "units::bytes")]
    pub weight_total: u64,
    #[serde(with = "units::bytes")]
    pub kv_bytes_per_request: u64,
    #[serde(with = "units::bytes")]
    pub workspace_bytes_per_request: u64,
    /// Seconds per layer per request in the prefill phase.
    pub compute_prefill_per_layer: f64,
    /// Seconds per layer per request for one decode step.
    pub compute_decode_per_layer: f64,
    pub output_tokens: u32,
    /// Decode compute scales as `B^decode_batch_exponent`.
    #[serde(default = "one")]
    pub decode_batch_exponent: f64,
    /// Share of the prefill workspace still needed while decoding.
    #[serde(default = "default_decode_workspace_fraction")]
    pub decode_workspace_fraction: f64,
    /// Share of the offloaded KV working set moved per layer per step.
    #[serde(default = "one")]
    pub kv_traffic_fraction: f64,
}

fn default_decode_workspace_fraction() -> f64 {
    0.25
}

impl ModelProfile {
    pub fn per_layer_weight(&self) -> f64 {
        self.weight_total as f64 / self.num_layers as f64
    }

    /// `C(B)`, in bytes.
    pub fn kv_cache_bytes(&self, batch: u32) -> f64 {
        batch as f64 * self.kv_bytes_per_request as f64
    }

    /// `H(B)`, in bytes.
    pub fn workspace_bytes(&self, batch: u32) -> f64 {
        batch as f64 * self.workspace_bytes_per_request as f64
    }

    /// An 8B-parameter class model in 16-bit weights.
    pub fn llama_8b_like() -> Self {
        Self {
            num_layers: 32,
            weight_total: 16 * GIB,
            kv_bytes_per_request: GIB / 8,
            workspace_bytes_per_request: GIB / 16,
            compute_prefill_per_layer: 0.006,
            compute_decode_per_layer: 0.0004,
            output_tokens: 32,
            decode_batch_exponent: 1.0,
            decode_workspace_fraction: 0.25,
            kv_traffic_fraction: 1.0,
        }
    }

    /// A 70B-parameter class model in 16-bit weights.
    pub fn llama_70b_like() -> Self {
        Self {
            num_layers: 80,
            weight_total: 140 * GIB,
            kv_bytes_per_request: GIB / 8,
            workspace_bytes_per_request: GIB / 16,
            compute_prefill_per_layer: 0.012,
            compute_decode_per_layer: 0.0005,
            output_tokens: 16,
            decode_batch_exponent: 1.0,
            decode_workspace_fraction: 0.25,
            kv_traffic_fraction: 1.0,
        }
    }
}

impl Validate for ModelProfile {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.num_layers < 1 {
            out.push(Violation::new("num_layers", self.num_layers, "must be >= 1"));
        }
        require_positive(&mut out, "weight_total", self.weight_total as f64);
        require_non_negative(&mut out, "compute_prefill_per_layer", self.compute_prefill_per_layer);
        require_non_negative(&mut out, "compute_decode_per_layer", self.compute_decode_per_layer);
        if self.output_tokens < 1 {
            out.push(Violation::new("output_tokens", self.output_tokens, "must be >= 1"));
        }
        require_non_negative(&mut out, "decode_batch_exponent", self.decode_batch_exponent);
        require_non_negative(&mut out, "decode_workspace_fraction", self.decode_workspace_fraction);
        require_non_negative(&mut out, "kv_traffic_fraction", self.kv_traffic_fraction);
        out
    }
}

/// A vector database split into equally sized partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatabaseProfile {
    pub num_partitions: u32,
    #[serde(with = "units::bytes")]
    pub partition_bytes: u64,
    /// Seconds to search one resident partition for one retrieval batch.
    pub search_seconds_per_partition: f64,
    /// Seconds to bring one partition from disk for a retrieval batch.
    pub load_seconds_per_partition: f64,
}

impl DatabaseProfile {
    /// 32 partitions of 8 GiB; load time derived from the disk bandwidth.
    pub fn trivia_like(hw: &HardwareProfile) -> Self {
        let partition_bytes = 8 * GIB;
        Self {
            num_partitions: 32,
            partition_bytes,
            search_seconds_per_partition: 0.5,
            load_seconds_per_partition: partition_bytes as f64 / hw.bw_cpu_disk,
        }
    }

    /// Total database size `V = N_p * M_p`.
    pub fn total_bytes(&self) -> u64 {
        self.num_partitions as u64 * self.partition_bytes
    }
}

impl Validate for DatabaseProfile {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.num_partitions < 1 {
            out.push(Violation::new("num_partitions", self.num_partitions, "must be >= 1"));
        }
        require_positive(&mut out, "partition_bytes", self.partition_bytes as f64);
        require_non_negative(&mut out, "search_seconds_per_partition", self.search_seconds_per_partition);
        require_non_negative(&mut out, "load_seconds_per_partition", self.load_seconds_per_partition);
        out
    }
}

/// Fractions of one kind of data held on each tier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierSplit {
    pub gpu: f64,
    pub cpu: f64,
    pub disk: f64,
}

impl TierSplit {
    pub const GPU_ONLY: TierSplit = TierSplit {
        gpu: 1.0,
        cpu: 0.0,
        disk: 0.0,
    };

    pub fn new(gpu: f64, cpu: f64, disk: f64) -> Self {
        Self { gpu, cpu, disk }
    }

    /// GPU and CPU shares given; the remainder lands on disk.
    pub fn spill_to_disk(gpu: f64, cpu: f64) -> Self {
        let disk = (1.0 - gpu - cpu).max(0.0);
        Self { gpu, cpu, disk }
    }

    pub fn sum(&self) -> f64 {
        self.gpu + self.cpu + self.disk
    }

    /// Share that has to be fetched from below the GPU.
    pub fn offloaded(&self) -> f64 {
        self.cpu + self.disk
    }

    fn violations(&self, prefix: &str, out: &mut Vec<Violation>) {
        for (name, v) in [("gpu", self.gpu), ("cpu", self.cpu), ("disk", self.disk)] {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::new(&format!("{prefix}_{name}"), v, "must be in [0, 1]"));
            }
        }
        let sum = self.sum();
        if (sum - 1.0).abs() > FRACTION_TOLERANCE {
            out.push(Violation::new(
                prefix,
                format!("({}, {}, {})", self.gpu, self.cpu, self.disk),
                format!("{} fractions sum {} != 1", kind_name(prefix), round_display(sum)),
            ));
        }
    }
}

fn kind_name(prefix: &str) -> &'static str {
    if prefix == "w" {
        "weight"
    } else {
        "cache"
    }
}

fn round_display(v: f64) -> f64 {
    (v * 1e9).round() / 1e9
}

/// Joint placement of weights, KV cache and database partitions, plus the
/// generation batch size the placement is provisioned for.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub weights: TierSplit,
    pub cache: TierSplit,
    /// Database partitions kept resident in host memory (`P`).
    pub resident_partitions: u32,
    /// Generation batch size the memory is provisioned for (`B`).
    pub gen_batch_size: u32,
}

impl PlacementConfig {
    pub fn new(weights: TierSplit, cache: TierSplit, resident_partitions: u32, gen_batch_size: u32) -> Self {
        Self {
            weights,
            cache,
            resident_partitions,
            gen_batch_size,
        }
    }

    pub fn with_partitions(self, resident_partitions: u32) -> Self {
        Self {
            resident_partitions,
            ..self
        }
    }

    pub fn with_batch(self, gen_batch_size: u32) -> Self {
        Self { gen_batch_size, ..self }
    }

    /// Validation including the bound `P <= N_p`.
    pub fn violations_for(&self, db: &DatabaseProfile) -> Vec<Violation> {
        let mut out = self.violations();
        if self.resident_partitions > db.num_partitions {
            out.push(Violation::new(
                "resident_partitions",
                self.resident_partitions,
                format!("must be <= num_partitions ({})", db.num_partitions),
            ));
        }
        out
    }
}

impl Validate for PlacementConfig {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        self.weights.violations("w", &mut out);
        self.cache.violations("c", &mut out);
        if self.gen_batch_size < 1 {
            out.push(Violation::new("gen_batch_size", self.gen_batch_size, "must be >= 1"));
        }
        out
    }
}

impl fmt::Display for PlacementConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "w=({:.3},{:.3},{:.3}) c=({:.3},{:.3},{:.3}) P={} B={}",
            self.weights.gpu,
            self.weights.cpu,
            self.weights.disk,
            self.cache.gpu,
            self.cache.cpu,
            self.cache.disk,
            self.resident_partitions,
            self.gen_batch_size
        )
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid placement `{input}`: {reason}")]
pub struct ParsePlacementError {
    pub input: String,
    pub reason: String,
}

/// Parses `w=GPU,CPU,DISK;c=GPU,CPU,DISK;P=N;B=N`. Items may also be
/// separated by spaces and splits may be parenthesised, so the `Display`
/// form parses back. A two-value split leaves the remainder on disk.
impl std::str::FromStr for PlacementConfig {
    type Err = ParsePlacementError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let fail = |reason: String| ParsePlacementError {
            input: s.to_string(),
            reason,
        };
        let split = |v: &str| -> Result<TierSplit, ParsePlacementError> {
            let parts: Vec<f64> = v
                .trim_matches(|c| c == '(' || c == ')')
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| fail(format!("bad fraction list `{v}`: {e}")))?;
            match parts[..] {
                [g, c, d] => Ok(TierSplit::new(g, c, d)),
                [g, c] => Ok(TierSplit::spill_to_disk(g, c)),
                _ => Err(fail(format!("expected 2 or 3 fractions in `{v}`"))),
            }
        };
        let (mut w, mut c, mut p, mut b) = (None, None, None, None);
        for item in s.split(|ch: char| ch == ';' || ch.is_whitespace()).filter(|x| !x.is_empty()) {
            let (key, value) = item.split_once('=').ok_or_else(|| fail(format!("`{item}` is not key=value")))?;
            let count = |v: &str| v.parse::<u32>().map_err(|e| fail(format!("bad count `{v}`: {e}")));
            match key {
                "w" => w = Some(split(value)?),
                "c" => c = Some(split(value)?),
                "P" => p = Some(count(value)?),
                "B" => b = Some(count(value)?),
                other => return Err(fail(format!("unknown key `{other}`"))),
            }
        }
        let cfg = PlacementConfig::new(
            w.ok_or_else(|| fail("missing w".into()))?,
            c.ok_or_else(|| fail("missing c".into()))?,
            p.ok_or_else(|| fail("missing P".into()))?,
            b.ok_or_else(|| fail("missing B".into()))?,
        );
        cfg.validate().map_err(|v| fail(v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Seconds since the start of the workload.
    pub arrival_time: f64,
    pub top_k: u32,
}

impl Validate for Request {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        require_non_negative(&mut out, "arrival_time", self.arrival_time);
        if self.top_k < 1 {
            out.push(Violation::new("top_k", self.top_k, "must be >= 1"));
        }
        out
    }
}

/// Stage timestamps of one served request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RequestTrace {
    pub id: u64,
    pub arrival: f64,
    pub retrieval_start: f64,
    pub retrieval_end: f64,
    pub generation_start: f64,
    pub generation_end: f64,
    pub completion: f64,
}

impl RequestTrace {
    /// Time spent queued before retrieval plus queued between the stages.
    pub fn waiting(&self) -> f64 {
        (self.retrieval_start - self.arrival) + (self.generation_start - self.retrieval_end)
    }

    pub fn retrieval(&self) -> f64 {
        self.retrieval_end - self.retrieval_start
    }

    pub fn generation(&self) -> f64 {
        self.generation_end - self.generation_start
    }

    pub fn latency(&self) -> f64 {
        self.completion - self.arrival
    }
}

impl Validate for RequestTrace {
    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let stamps = [
            ("arrival", self.arrival),
            ("retrieval_start", self.retrieval_start),
            ("retrieval_end", self.retrieval_end),
            ("generation_start", self.generation_start),
            ("generation_end", self.generation_end),
        ];
        for pair in stamps.windows(2) {
            if pair[1].1 < pair[0].1 {
                out.push(Violation::new(
                    pair[1].0,
                    pair[1].1,
                    format!("precedes {} ({})", pair[0].0, pair[0].1),
                ));
            }
        }
        if self.completion != self.generation_end {
            out.push(Violation::new("completion", self.completion, "must equal generation_end"));
        }
        let parts = self.waiting() + self.retrieval() + self.generation();
        if (parts - self.latency()).abs() > 1e-9 * self.latency().abs().max(1.0) {
            out.push(Violation::new("breakdown", parts, "does not sum to latency"));
        }
        out
    }
}
