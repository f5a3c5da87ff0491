mod common;

use proptest::prelude::*;
use ragsched::cli::sim_config;
use ragsched::cost_model::CostModelFit;
use ragsched::domain::{
    DatabaseProfile, HardwareProfile, ModelProfile, PlacementConfig, Request, TierSplit, Validate,
};
use ragsched::prefetch::PrefetchMode;
use ragsched::scheduler::{PolicyEntry, PolicyTable};
use ragsched::simulator::output::{events_jsonl, traces_csv};
use ragsched::simulator::{self, Aggregates, EventKind, SerialPolicy, SimConfig, SimMode, SimOutcome};
use ragsched::units::GIB;
use ragsched::workload::{Interval, IntervalSchedule};
use std::collections::HashMap;
use std::sync::OnceLock;

fn reference_policy() -> &'static PolicyTable {
    static TABLE: OnceLock<PolicyTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let sc = common::reference().scaled();
        common::profile(&sc, &sc.probe_batches)
    })
}

fn reference_config(mode: SimMode, seed: u64) -> SimConfig {
    let sc = common::reference().scaled();
    let policy = (mode == SimMode::Pipelined).then(|| reference_policy().clone());
    sim_config(&sc, mode, policy, seed).unwrap()
}

/// Retrieval takes `retrieval` seconds per batch, generation `per_request * b`.
fn linear_config(mode: SimMode, batch: u32, retrieval: f64, per_request: f64, rate: f64, window: f64) -> SimConfig {
    let hw = HardwareProfile {
        gpu_mem: 64 * GIB,
        cpu_mem: 64 * GIB,
        disk_capacity: 64 * GIB,
        bw_gpu_cpu: (16 * GIB) as f64,
        bw_cpu_disk: (4 * GIB) as f64,
        gpu_layer_rate: 1.0,
        jitter_sigma: 0.0,
    };
    let model = ModelProfile {
        num_layers: 1,
        weight_total: GIB,
        kv_bytes_per_request: 0,
        workspace_bytes_per_request: 0,
        compute_prefill_per_layer: 0.0,
        compute_decode_per_layer: per_request,
        output_tokens: 1,
        decode_batch_exponent: 1.0,
        decode_workspace_fraction: 0.25,
        kv_traffic_fraction: 1.0,
    };
    let db = DatabaseProfile {
        num_partitions: 1,
        partition_bytes: GIB,
        search_seconds_per_partition: retrieval,
        load_seconds_per_partition: 0.0,
    };
    let placement = PlacementConfig::new(TierSplit::GPU_ONLY, TierSplit::GPU_ONLY, 1, batch);
    SimConfig {
        mode,
        hw,
        model,
        db,
        policy: Some(PolicyTable {
            entries: vec![PolicyEntry {
                min_backlog: 1,
                max_backlog: None,
                placement,
                fit: CostModelFit::new(per_request, 1.0),
                retrieval_seconds: retrieval,
                generation_seconds: per_request * batch as f64,
                search_path: vec![],
            }],
        }),
        serial: Some(SerialPolicy {
            placement,
            schedule: IntervalSchedule {
                intervals: vec![Interval { duration: 1e6, rate }],
            },
            window_seconds: window,
            max_batch: batch,
        }),
        prefetch_mode: PrefetchMode::ContinuousQueue,
        max_retrieval_batch: batch as usize,
        batch_candidates: vec![batch],
        seed: 0,
    }
}

fn arrivals(max_len: usize, horizon: f64) -> impl Strategy<Value = Vec<Request>> {
    prop::collection::vec(0.0..horizon, 0..max_len).prop_map(|mut v| {
        v.sort_by(f64::total_cmp);
        common::requests_at(&v)
    })
}

fn stage(kind: &EventKind) -> Option<(usize, Vec<u64>)> {
    match kind {
        EventKind::Arrived { request } => Some((0, vec![*request])),
        EventKind::RetrievalBatched { requests, .. } => Some((1, requests.clone())),
        EventKind::RetrievalDone { requests } => Some((2, requests.clone())),
        EventKind::GenerationBatched { requests, .. } => Some((3, requests.clone())),
        EventKind::Done { requests } => Some((4, requests.clone())),
        _ => None,
    }
}

fn check_outcome(workload: &[Request], out: &SimOutcome) -> Result<(), TestCaseError> {
    prop_assert_eq!(out.traces.len(), workload.len());
    let mut ids: Vec<u64> = out.traces.iter().map(|t| t.id).collect();
    ids.dedup();
    prop_assert_eq!(ids.len(), workload.len());

    for t in &out.traces {
        prop_assert!(t.validate().is_ok(), "{:?}", t);
        prop_assert_eq!(t.completion, t.generation_end);
        let parts = t.waiting() + t.retrieval() + t.generation();
        prop_assert!((parts - t.latency()).abs() <= 1e-9);
    }
    prop_assert_eq!(out.aggregates, Aggregates::from_traces(&out.traces));
    prop_assert!((out.breakdown.total() - out.aggregates.average).abs() <= 1e-9);

    let mut progress: HashMap<u64, (usize, f64)> = HashMap::new();
    let mut generated: HashMap<u64, usize> = HashMap::new();
    let mut last = f64::NEG_INFINITY;
    for e in &out.events {
        prop_assert!(e.time >= last);
        last = e.time;
        if let Some((s, reqs)) = stage(&e.kind) {
            for r in reqs {
                let prev = progress.get(&r).map_or(usize::MAX, |p| p.0);
                let expected = if s == 0 { usize::MAX } else { s - 1 };
                prop_assert_eq!(prev, expected, "request {} reached stage {} out of order", r, s);
                progress.insert(r, (s, e.time));
                if s == 3 {
                    *generated.entry(r).or_default() += 1;
                }
            }
        }
    }
    prop_assert!(progress.values().all(|p| p.0 == 4));
    prop_assert!(generated.values().all(|&n| n == 1));
    prop_assert_eq!(out.memory_violations, 0);
    Ok(())
}

/// Greedy serial server: one batch at a time, each holding up to `limit` arrived requests.
fn serial_oracle(arrivals: &[f64], limit: usize, retrieval: f64, per_request: f64) -> Vec<f64> {
    let mut completion = vec![0.0; arrivals.len()];
    let (mut free, mut next) = (0.0_f64, 0);
    while next < arrivals.len() {
        let start = free.max(arrivals[next]);
        let mut end = next;
        while end < arrivals.len() && end - next < limit && arrivals[end] <= start {
            end += 1;
        }
        let done = start + retrieval + per_request * (end - next) as f64;
        completion[next..end].iter_mut().for_each(|c| *c = done);
        free = done;
        next = end;
    }
    completion
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn reference_runs_conserve_requests(workload in arrivals(120, 40.0), seed in any::<u64>()) {
        for mode in [SimMode::Pipelined, SimMode::Serial] {
            let out = simulator::run(&workload, &reference_config(mode, seed)).unwrap();
            check_outcome(&workload, &out)?;
        }
    }

    #[test]
    fn identical_inputs_give_identical_logs(workload in arrivals(80, 30.0), seed in any::<u64>()) {
        for mode in [SimMode::Pipelined, SimMode::Serial] {
            let cfg = reference_config(mode, seed);
            let a = simulator::run(&workload, &cfg).unwrap();
            let b = simulator::run(&workload, &cfg).unwrap();
            prop_assert_eq!(events_jsonl(&a), events_jsonl(&b));
            prop_assert_eq!(traces_csv(&a), traces_csv(&b));
        }
    }
}

proptest! {
    #[test]
    fn serial_latency_follows_the_queue_recurrence(
        gaps in prop::collection::vec(0.0..4.0f64, 1..12), rate in 0.2..2.0f64, window in 0.5..4.0f64,
        retrieval in 0.1..3.0f64, per_request in 0.01..1.0f64,
    ) {
        let mut t = 0.0;
        let times: Vec<f64> = gaps.iter().map(|g| { t += g; t }).collect();
        let limit = ((window * rate).round().max(1.0) as usize).min(8);
        let cfg = linear_config(SimMode::Serial, 8, retrieval, per_request, rate, window);
        let out = simulator::run(&common::requests_at(&times), &cfg).unwrap();
        let batches = out.generation_batches().len();
        prop_assume!(batches <= 5);
        let want = serial_oracle(&times, limit, retrieval, per_request);
        for (trace, done) in out.traces.iter().zip(&want) {
            prop_assert!((trace.completion - done).abs() <= 1e-9, "{} vs {}", trace.completion, done);
        }
        let avg = want.iter().zip(&times).map(|(c, a)| c - a).sum::<f64>() / times.len() as f64;
        prop_assert!((out.aggregates.average - avg).abs() <= 1e-9);
    }

    #[test]
    fn pipelining_never_lengthens_a_saturated_run(
        n in 1usize..=60, batch in 1u32..=16, retrieval in 0.1..5.0f64, per_request in 0.01..1.0f64,
    ) {
        let workload = common::requests_at(&vec![0.0; n]);
        let window = 1e6;
        let pipelined = simulator::run(&workload, &linear_config(SimMode::Pipelined, batch, retrieval, per_request, 1.0, window)).unwrap();
        let serial = simulator::run(&workload, &linear_config(SimMode::Serial, batch, retrieval, per_request, 1.0, window)).unwrap();
        let makespan = |o: &SimOutcome| o.traces.iter().map(|t| t.completion).fold(0.0, f64::max);
        prop_assert!(makespan(&pipelined) <= makespan(&serial) + 1e-9);
    }
}

#[test]
fn serial_mode_requires_its_policy() {
    let mut cfg = linear_config(SimMode::Serial, 4, 1.0, 0.1, 1.0, 1.0);
    cfg.serial = None;
    let err = simulator::run(&common::requests_at(&[0.0]), &cfg).unwrap_err();
    assert_eq!(err, simulator::SimError::MissingSerialPolicy);
}

#[test]
fn reference_workload_completes_without_violations() {
    let runs = common::reference_runs();
    for o in [&runs.aware, &runs.serial, &runs.fixed] {
        assert_eq!(o.memory_violations, 0, "{} mode", o.mode);
        assert_eq!(o.traces.len(), runs.aware.traces.len());
    }
}
