#![allow(dead_code)]

use ragsched::cli::{scenario_workload, sim_config};
use ragsched::domain::Request;
use ragsched::scenario::{ScaledScenario, Scenario};
use ragsched::scheduler::{active_profile, PolicyTable};
use ragsched::simulator::{self, SimMode, SimOutcome};
use std::path::PathBuf;

pub fn scenarios_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

pub fn reference_path() -> PathBuf {
    scenarios_dir().join("reference-70b-pf-high.toml")
}

pub fn reference() -> Scenario {
    Scenario::load(&reference_path()).expect("reference scenario loads")
}

pub fn workload(sc: &Scenario) -> Vec<Request> {
    let scaled = sc.scaled();
    scenario_workload(&scaled, sc.simulation.time_scale, None, scaled.seed).expect("workload")
}

pub fn profile(sc: &ScaledScenario, probes: &[u32]) -> PolicyTable {
    active_profile(&sc.hw, &sc.model, &sc.db, probes, &sc.partition_candidates, &sc.profile_options).expect("profile")
}

/// Full reference experiment: backlog-aware pipelined, serial and the fixed
/// max-batch pipelined policy on one workload.
pub struct ReferenceRuns {
    pub scaled: ScaledScenario,
    pub aware: SimOutcome,
    pub serial: SimOutcome,
    pub fixed: SimOutcome,
}

pub fn reference_runs() -> ReferenceRuns {
    let sc = reference();
    let scaled = sc.scaled();
    let requests = workload(&sc);
    let seed = scaled.seed;

    let table = profile(&scaled, &scaled.probe_batches);
    let cfg = sim_config(&scaled, SimMode::Pipelined, Some(table), seed).expect("pipelined config");
    let aware = simulator::run(&requests, &cfg).expect("pipelined run");

    let cfg = sim_config(&scaled, SimMode::Serial, None, seed).expect("serial config");
    let serial = simulator::run(&requests, &cfg).expect("serial run");

    let max = *scaled.batch_candidates.iter().max().expect("candidates");
    let mut fixed_sc = scaled.clone();
    fixed_sc.batch_candidates = vec![max];
    let table = profile(&fixed_sc, &[max]);
    let cfg = sim_config(&fixed_sc, SimMode::Pipelined, Some(table), seed).expect("fixed config");
    let fixed = simulator::run(&requests, &cfg).expect("fixed run");

    ReferenceRuns {
        scaled,
        aware,
        serial,
        fixed,
    }
}

pub fn requests_at(arrivals: &[f64]) -> Vec<Request> {
    arrivals
        .iter()
        .enumerate()
        .map(|(i, &t)| Request {
            id: i as u64,
            arrival_time: t,
            top_k: 5,
        })
        .collect()
}
