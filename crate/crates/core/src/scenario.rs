//! TOML scenario files: profiles, workload schedule, simulation and
//! profiling knobs.

use crate::domain::{DatabaseProfile, HardwareProfile, ModelProfile, Validate, Violation};
use crate::prefetch::PrefetchMode;
use crate::scheduler::ProfileOptions;
use crate::units;
use crate::workload::{Interval, IntervalSchedule};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid scenario: {}", join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatabaseSection {
    pub num_partitions: u32,
    #[serde(with = "units::bytes")]
    pub partition_bytes: u64,
    pub search_seconds_per_partition: f64,
    /// Derived from `partition_bytes / bw_cpu_disk` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_seconds_per_partition: Option<f64>,
}

impl DatabaseSection {
    pub fn resolve(&self, hw: &HardwareProfile) -> DatabaseProfile {
        DatabaseProfile {
            num_partitions: self.num_partitions,
            partition_bytes: self.partition_bytes,
            search_seconds_per_partition: self.search_seconds_per_partition,
            load_seconds_per_partition: self
                .load_seconds_per_partition
                .unwrap_or(self.partition_bytes as f64 / hw.bw_cpu_disk),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalSection {
    pub duration_seconds: f64,
    pub rate_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSection {
    pub intervals: Vec<IntervalSection>,
    #[serde(default = "default_top_k")]
    pub top_k: u32,
}

fn default_top_k() -> u32 {
    5
}

impl WorkloadSection {
    /// Schedule in unscaled seconds.
    pub fn schedule(&self) -> IntervalSchedule {
        IntervalSchedule {
            intervals: self
                .intervals
                .iter()
                .map(|i| Interval {
                    duration: i.duration_seconds,
                    rate: i.rate_per_min / 60.0,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    /// Every time constant is divided by this factor (bandwidths and rates multiplied).
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default = "default_max_retrieval_batch")]
    pub max_retrieval_batch: u32,
    #[serde(default = "default_prefetch_mode")]
    pub prefetch_mode: PrefetchMode,
    #[serde(default = "default_batch_candidates")]
    pub batch_candidates: Vec<u32>,
    /// Serial batches hold the requests expected over this many minutes.
    #[serde(default = "default_serial_window")]
    pub serial_window_minutes: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_time_scale() -> f64 {
    1.0
}
fn default_max_retrieval_batch() -> u32 {
    64
}
fn default_prefetch_mode() -> PrefetchMode {
    PrefetchMode::ContinuousQueue
}
fn default_batch_candidates() -> Vec<u32> {
    vec![8, 16, 32, 48, 64]
}
fn default_serial_window() -> f64 {
    4.0
}

impl Default for SimulationSection {
    fn default() -> Self {
        Self {
            time_scale: default_time_scale(),
            max_retrieval_batch: default_max_retrieval_batch(),
            prefetch_mode: default_prefetch_mode(),
            batch_candidates: default_batch_candidates(),
            serial_window_minutes: default_serial_window(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfilingSection {
    /// Defaults to the simulation batch candidates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_batches: Option<Vec<u32>>,
    /// Defaults to every count from 0 to the number of partitions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_candidates: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fraction_step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub hardware: HardwareProfile,
    pub model: ModelProfile,
    pub database: DatabaseSection,
    pub workload: WorkloadSection,
    #[serde(default)]
    pub simulation: SimulationSection,
    #[serde(default)]
    pub profiling: ProfilingSection,
}

/// A scenario with every time constant divided by `time_scale`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledScenario {
    pub hw: HardwareProfile,
    pub model: ModelProfile,
    pub db: DatabaseProfile,
    pub schedule: IntervalSchedule,
    pub top_k: u32,
    pub serial_window_seconds: f64,
    pub max_retrieval_batch: u32,
    pub prefetch_mode: PrefetchMode,
    pub batch_candidates: Vec<u32>,
    pub probe_batches: Vec<u32>,
    pub partition_candidates: Vec<u32>,
    pub profile_options: ProfileOptions,
    pub seed: u64,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = toml::from_str(text)?;
        s.validate().map_err(ScenarioError::Invalid)?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn scaled(&self) -> ScaledScenario {
        let s = self.simulation.time_scale;
        let mut hw = self.hardware.clone();
        let db = self.database.resolve(&hw);
        hw.bw_gpu_cpu *= s;
        hw.bw_cpu_disk *= s;
        let mut model = self.model.clone();
        model.compute_prefill_per_layer /= s;
        model.compute_decode_per_layer /= s;
        let db = DatabaseProfile {
            search_seconds_per_partition: db.search_seconds_per_partition / s,
            load_seconds_per_partition: db.load_seconds_per_partition / s,
            ..db
        };
        let batch_candidates = self.simulation.batch_candidates.clone();
        ScaledScenario {
            partition_candidates: self
                .profiling
                .partition_candidates
                .clone()
                .unwrap_or_else(|| (0..=db.num_partitions).collect()),
            hw,
            model,
            db,
            schedule: self.workload.schedule().scaled(s),
            top_k: self.workload.top_k,
            serial_window_seconds: self.simulation.serial_window_minutes * 60.0 / s,
            max_retrieval_batch: self.simulation.max_retrieval_batch,
            prefetch_mode: self.simulation.prefetch_mode,
            probe_batches: self.profiling.probe_batches.clone().unwrap_or_else(|| batch_candidates.clone()),
            batch_candidates,
            profile_options: ProfileOptions {
                prefetch_mode: self.simulation.prefetch_mode,
                fraction_step: self.profiling.fraction_step.unwrap_or(0.05),
            },
            seed: self.simulation.seed,
        }
    }
}

impl Validate for Scenario {
    fn violations(&self) -> Vec<Violation> {
        let mut out = self.hardware.violations();
        out.extend(self.model.violations());
        out.extend(self.database.resolve(&self.hardware).violations());
        if let Err(e) = self.workload.schedule().validate() {
            out.push(Violation {
                field: "workload.intervals".into(),
                observed: String::new(),
                message: e.to_string(),
            });
        }
        let sim = &self.simulation;
        if !(sim.time_scale > 0.0 && sim.time_scale.is_finite()) {
            out.push(Violation {
                field: "simulation.time_scale".into(),
                observed: sim.time_scale.to_string(),
                message: "must be > 0".into(),
            });
        }
        if sim.max_retrieval_batch == 0 {
            out.push(Violation {
                field: "simulation.max_retrieval_batch".into(),
                observed: "0".into(),
                message: "must be >= 1".into(),
            });
        }
        if sim.batch_candidates.is_empty() || sim.batch_candidates.contains(&0) {
            out.push(Violation {
                field: "simulation.batch_candidates".into(),
                observed: format!("{:?}", sim.batch_candidates),
                message: "must be non-empty and positive".into(),
            });
        }
        if sim.serial_window_minutes.is_nan() || sim.serial_window_minutes <= 0.0 {
            out.push(Violation {
                field: "simulation.serial_window_minutes".into(),
                observed: sim.serial_window_minutes.to_string(),
                message: "must be > 0".into(),
            });
        }
        out
    }
}
