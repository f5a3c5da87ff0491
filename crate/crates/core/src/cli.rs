//! The `ragsched` command line.

use crate::cost_model::{estimate_generation, layer_inputs, retrieval_time, Jitter};
use crate::domain::{PlacementConfig, Request};
use crate::memory_planner::{check_feasible, enumerate_feasible, fraction_steps, plan_transfer, DiskResidency, PlacementGrid};
use crate::prefetch::{queue_capacity, simulate_layer_timeline, Phase, PrefetchMode, QueueCapacity};
use crate::scenario::{ScaledScenario, Scenario};
use crate::scheduler::{active_profile, PolicyTable, ProfileError};
use crate::simulator::{self, compare, metrics_report, output, SerialPolicy, SimConfig, SimError, SimMode, Summary};
use crate::workload::{generate_poisson, load_trace, save_trace, sub_seed, write_trace, Interval, IntervalSchedule};
use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_SIMULATION: i32 = 4;

/// A failed command: the message goes to stderr and `code` becomes the exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub error: anyhow::Error,
}

impl Failure {
    fn invalid(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INVALID,
            error: error.into(),
        }
    }
    fn infeasible(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_INFEASIBLE,
            error: error.into(),
        }
    }
    fn simulation(error: impl Into<anyhow::Error>) -> Self {
        Self {
            code: EXIT_SIMULATION,
            error: error.into(),
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

type CmdResult = Result<String, Failure>;

#[derive(Debug, Parser)]
#[command(name = "ragsched", version, about = "Placement planning, batch scheduling and simulation for offloaded RAG serving")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Poisson workload trace.
    GenWorkload(GenWorkloadArgs),
    /// Check a placement against the memory constraints, or list feasible ones.
    Plan(PlanArgs),
    /// Profile a scenario into a backlog-indexed policy table.
    Profile(ProfileArgs),
    /// Replay a workload through the pipelined system and/or the serial baseline.
    Simulate(SimulateArgs),
    /// Compare two simulation summaries.
    Compare(CompareArgs),
    /// Compute a per-layer prefetch timeline as CSV.
    Timeline(TimelineArgs),
}

#[derive(Debug, Args)]
pub struct GenWorkloadArgs {
    /// Comma-separated `SECONDS:RATE/min` (or `/s`) intervals.
    #[arg(long, value_parser = parse_intervals)]
    pub intervals: IntervalSchedule,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 5)]
    pub top_k: u32,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Placement to check, e.g. `w=0.5,0.5,0;c=1,0,0;P=8;B=16`.
    #[arg(long, conflicts_with = "enumerate")]
    pub placement: Option<PlacementConfig>,
    /// Also report the transfer needed to reach `--placement` from this one.
    #[arg(long, requires = "placement")]
    pub from: Option<PlacementConfig>,
    /// List every feasible grid placement at `--batch`.
    #[arg(long)]
    pub enumerate: bool,
    #[arg(long, default_value_t = 1)]
    pub batch: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct ProfileArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Probe batch sizes; defaults to the scenario's.
    #[arg(long, value_delimiter = ',')]
    pub probe_batches: Option<Vec<u32>>,
    /// Policy table JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Pipelined,
    Serial,
}

impl From<ModeArg> for SimMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Pipelined => SimMode::Pipelined,
            ModeArg::Serial => SimMode::Serial,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Workload CSV in unscaled seconds; generated from the scenario schedule when omitted.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    /// Modes to run; each writes into `OUT_DIR/<mode>/`.
    #[arg(long, value_enum, value_delimiter = ',', default_value = "pipelined")]
    pub mode: Vec<ModeArg>,
    /// Policy table JSON, required for pipelined mode.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Overrides the scenario's generation batch candidates.
    #[arg(long, value_delimiter = ',')]
    pub batch_candidates: Option<Vec<u32>>,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Number of modes simulated concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub summary_a: PathBuf,
    pub summary_b: PathBuf,
    /// Also write the comparison as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Prefill,
    Decode,
}

#[derive(Debug, Args)]
pub struct TimelineArgs {
    /// Per-layer compute seconds.
    #[arg(long, value_delimiter = ',', requires = "transfer", conflicts_with = "scenario")]
    pub compute: Option<Vec<f64>>,
    /// Per-layer transfer seconds; 0 marks a resident layer.
    #[arg(long, value_delimiter = ',')]
    pub transfer: Option<Vec<f64>>,
    /// Queue capacity: a positive count or `unbounded`.
    #[arg(long, value_parser = parse_capacity, default_value = "unbounded")]
    pub capacity: QueueCapacity,
    #[arg(long, requires = "placement")]
    pub scenario: Option<PathBuf>,
    #[arg(long)]
    pub placement: Option<PlacementConfig>,
    #[arg(long, value_enum, default_value = "decode")]
    pub phase: PhaseArg,
    /// Requests in the pass; defaults to the placement's B.
    #[arg(long)]
    pub batch: Option<u32>,
    #[arg(long, default_value = "continuous-queue")]
    pub mode: PrefetchMode,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

fn parse_intervals(s: &str) -> Result<IntervalSchedule, String> {
    let mut intervals = Vec::new();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        let (duration, rate) = item
            .split_once(':')
            .ok_or_else(|| format!("`{item}` is not SECONDS:RATE/min"))?;
        let duration: f64 = duration.trim().parse().map_err(|e| format!("duration `{duration}`: {e}"))?;
        let (value, per) = rate.split_once('/').unwrap_or((rate, "s"));
        let value: f64 = value.trim().parse().map_err(|e| format!("rate `{rate}`: {e}"))?;
        let rate = match per.trim() {
            "s" | "sec" => value,
            "min" => value / 60.0,
            other => return Err(format!("rate unit `{other}` (expected /min or /s)")),
        };
        intervals.push(Interval { duration, rate });
    }
    if intervals.is_empty() {
        return Err("no intervals given".into());
    }
    IntervalSchedule::new(intervals).map_err(|e| e.to_string())
}

fn parse_capacity(s: &str) -> Result<QueueCapacity, String> {
    if s.eq_ignore_ascii_case("unbounded") {
        return Ok(QueueCapacity::Unbounded);
    }
    match s.parse::<u32>() {
        Ok(n) if n >= 1 => Ok(QueueCapacity::Bounded(n)),
        _ => Err(format!("capacity `{s}` must be a positive integer or `unbounded`")),
    }
}

/// Runs a parsed command; on success returns what goes to stdout.
pub fn execute(cli: Cli) -> CmdResult {
    match cli.command {
        Command::GenWorkload(a) => gen_workload(a),
        Command::Plan(a) => plan(a),
        Command::Profile(a) => profile(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Timeline(a) => timeline(a),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the exit code, stdout and stderr.
pub fn run_with_args<I, T>(args: I) -> (i32, String, String)
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let text = e.render().to_string();
            return if code == EXIT_OK {
                (code, text, String::new())
            } else {
                (code, String::new(), text)
            };
        }
    };
    match execute(cli) {
        Ok(out) => (EXIT_OK, out, String::new()),
        Err(f) => (f.code, String::new(), format!("error: {f}\n")),
    }
}

fn guard_output(path: &Path, force: bool) -> Result<(), Failure> {
    if path.exists() && !force {
        return Err(Failure::invalid(anyhow!(
            "{} already exists (pass --force to overwrite)",
            path.display()
        )));
    }
    Ok(())
}

fn write_output(path: &Path, contents: &str, force: bool) -> Result<(), Failure> {
    guard_output(path, force)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .with_context(|| format!("creating {}", dir.display()))
            .map_err(Failure::invalid)?;
    }
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::invalid)
}

fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    Scenario::load(path).map_err(Failure::invalid)
}

fn gen_workload(a: GenWorkloadArgs) -> CmdResult {
    let requests = generate_poisson(&a.intervals, a.seed, a.top_k);
    let mut buf = Vec::new();
    write_trace(&requests, &mut buf).map_err(Failure::invalid)?;
    let text = String::from_utf8(buf).expect("trace is utf-8");
    match a.out {
        Some(path) => {
            guard_output(&path, a.force)?;
            save_trace(&requests, &path).map_err(Failure::invalid)?;
            Ok(format!("wrote {} requests to {}\n", requests.len(), path.display()))
        }
        None => Ok(text),
    }
}

#[derive(Serialize)]
struct PlanReport {
    placement: PlacementConfig,
    feasible: bool,
    binding: Option<&'static str>,
    gpu_used: f64,
    cpu_used: f64,
    disk_used: f64,
    gpu_slack: f64,
    cpu_slack: f64,
    disk_slack: f64,
    retrieval_seconds: f64,
    generation_seconds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transfer: Option<crate::memory_planner::TransferPlan>,
}

#[derive(Serialize)]
struct EnumerateReport {
    batch: u32,
    count: usize,
    placements: Vec<PlacementConfig>,
}

fn plan(a: PlanArgs) -> CmdResult {
    let sc = load_scenario(&a.scenario)?.scaled();
    let (json, infeasible) = if let Some(cfg) = a.placement {
        let report = check_feasible(&cfg, &sc.hw, &sc.model, &sc.db);
        let generation_seconds = estimate_generation(&cfg, cfg.gen_batch_size, &sc.hw, &sc.model, sc.prefetch_mode, &mut Jitter::none())
            .ok()
            .map(|e| e.total);
        let transfer = a
            .from
            .map(|old| plan_transfer(&old, &cfg, &sc.hw, &sc.model, &sc.db, &DiskResidency::new()));
        let out = PlanReport {
            placement: cfg,
            feasible: report.feasible,
            binding: report.binding(),
            gpu_used: report.gpu_used,
            cpu_used: report.cpu_used,
            disk_used: report.disk_used,
            gpu_slack: report.gpu_slack,
            cpu_slack: report.cpu_slack,
            disk_slack: report.disk_slack,
            retrieval_seconds: retrieval_time(cfg.resident_partitions, &sc.db),
            generation_seconds,
            transfer,
        };
        (serde_json::to_string_pretty(&out).expect("serializes"), !report.feasible)
    } else if a.enumerate {
        let steps = fraction_steps(sc.profile_options.fraction_step);
        let grid = PlacementGrid {
            w_gpu: steps.clone(),
            c_gpu: steps,
            partitions: sc.partition_candidates.clone(),
            batches: vec![a.batch],
        };
        let placements = enumerate_feasible(&sc.hw, &sc.model, &sc.db, &grid);
        let out = EnumerateReport {
            batch: a.batch,
            count: placements.len(),
            placements,
        };
        (serde_json::to_string_pretty(&out).expect("serializes"), out.count == 0)
    } else {
        return Err(Failure::invalid(anyhow!("pass --placement or --enumerate")));
    };
    let json = json + "\n";
    let stdout = match &a.out {
        Some(path) => {
            write_output(path, &json, a.force)?;
            format!("wrote {}\n", path.display())
        }
        None => json,
    };
    if infeasible {
        let detail = if a.enumerate {
            crate::memory_planner::binding_constraint(&sc.hw, &sc.model, &sc.db, a.batch)
        } else {
            "placement violates the memory constraints".to_string()
        };
        return Err(Failure::infeasible(anyhow!("{detail}\n{stdout}")));
    }
    Ok(stdout)
}

fn profile(a: ProfileArgs) -> CmdResult {
    let sc = load_scenario(&a.scenario)?.scaled();
    guard_output(&a.out, a.force)?;
    let probes = a.probe_batches.unwrap_or_else(|| sc.probe_batches.clone());
    let table = active_profile(&sc.hw, &sc.model, &sc.db, &probes, &sc.partition_candidates, &sc.profile_options)
        .map_err(|e| match e {
            ProfileError::Infeasible { .. } => Failure::infeasible(e),
            other => Failure::invalid(other),
        })?;
    write_output(&a.out, &(table.to_json() + "\n"), a.force)?;
    let mut s = String::new();
    for (i, e) in table.entries.iter().enumerate() {
        let range = match e.max_backlog {
            Some(m) => format!("{}..={m}", e.min_backlog),
            None => format!("{}..", e.min_backlog),
        };
        let _ = writeln!(s, "entry {i}: backlog {range}, T(B) = {:.6} * B^{:.4}", e.fit.a, e.fit.c);
        for (k, step) in e.search_path.iter().enumerate() {
            let _ = writeln!(
                s,
                "  step {k}: {}  t_ret={:.4} t_gen={:.4} max={:.4}",
                step.placement, step.retrieval_seconds, step.generation_seconds, step.objective
            );
        }
    }
    let _ = writeln!(s, "wrote {} entries to {}", table.entries.len(), a.out.display());
    Ok(s)
}

/// Workload for a scenario in scaled seconds.
pub fn scenario_workload(sc: &ScaledScenario, time_scale: f64, file: Option<&Path>, seed: u64) -> Result<Vec<Request>, Failure> {
    let unscaled = match file {
        Some(path) => load_trace(path)
            .with_context(|| format!("loading {}", path.display()))
            .map_err(Failure::invalid)?,
        None => generate_poisson(&sc.schedule.scaled(1.0 / time_scale), sub_seed(seed, "workload"), sc.top_k),
    };
    Ok(unscaled
        .into_iter()
        .map(|r| Request {
            arrival_time: r.arrival_time / time_scale,
            ..r
        })
        .collect())
}

/// Simulation config for one mode of a scaled scenario.
pub fn sim_config(sc: &ScaledScenario, mode: SimMode, policy: Option<PolicyTable>, seed: u64) -> Result<SimConfig, SimError> {
    let serial = match mode {
        SimMode::Serial => {
            let max_batch = sc.batch_candidates.iter().copied().max().unwrap_or(1);
            let placement = simulator::serial_placement(
                &sc.hw,
                &sc.model,
                &sc.db,
                max_batch,
                &sc.partition_candidates,
                sc.profile_options.fraction_step,
                sc.prefetch_mode,
            )?;
            Some(SerialPolicy {
                placement,
                schedule: sc.schedule.clone(),
                window_seconds: sc.serial_window_seconds,
                max_batch,
            })
        }
        SimMode::Pipelined => None,
    };
    Ok(SimConfig {
        mode,
        hw: sc.hw.clone(),
        model: sc.model.clone(),
        db: sc.db.clone(),
        policy,
        serial,
        prefetch_mode: sc.prefetch_mode,
        max_retrieval_batch: sc.max_retrieval_batch as usize,
        batch_candidates: sc.batch_candidates.clone(),
        seed: sub_seed(seed, "simulation"),
    })
}

fn simulate(a: SimulateArgs) -> CmdResult {
    let scenario = load_scenario(&a.scenario)?;
    let mut sc = scenario.scaled();
    if let Some(c) = a.batch_candidates {
        if c.is_empty() || c.contains(&0) {
            return Err(Failure::invalid(anyhow!("batch candidates must be positive")));
        }
        sc.batch_candidates = c;
    }
    let seed = a.seed.unwrap_or(sc.seed);
    let mut modes: Vec<SimMode> = a.mode.iter().map(|&m| m.into()).collect();
    modes.dedup();
    let policy = match &a.policy {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .map_err(Failure::invalid)?;
            Some(PolicyTable::from_json(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .map_err(Failure::invalid)?)
        }
        None if modes.contains(&SimMode::Pipelined) => {
            return Err(Failure::invalid(anyhow!("pipelined mode requires --policy")));
        }
        None => None,
    };
    for m in &modes {
        let dir = a.out_dir.join(m.as_str());
        if let Some(f) = output::existing_artifacts(&dir).first() {
            guard_output(&dir.join(f), a.force)?;
        }
    }
    let workload = scenario_workload(&sc, scenario.simulation.time_scale, a.workload.as_deref(), seed)?;

    let run_one = |mode: SimMode| -> Result<simulator::SimOutcome, Failure> {
        let policy = if mode == SimMode::Pipelined { policy.clone() } else { None };
        let cfg = sim_config(&sc, mode, policy, seed).map_err(|e| match e {
            SimError::InfeasibleSerial(_) => Failure::infeasible(e),
            other => Failure::simulation(other),
        })?;
        simulator::run(&workload, &cfg).map_err(Failure::simulation)
    };
    let jobs = a.jobs.max(1);
    let mut outcomes = Vec::with_capacity(modes.len());
    for chunk in modes.chunks(jobs) {
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&m| s.spawn(move || run_one(m))).collect();
            handles.into_iter().map(|h| h.join().expect("simulation thread panicked")).collect()
        });
        for r in results {
            outcomes.push(r?);
        }
    }

    let mut s = String::new();
    for o in &outcomes {
        let dir = a.out_dir.join(o.mode.as_str());
        output::write_artifacts(o, &dir)
            .with_context(|| format!("writing artifacts to {}", dir.display()))
            .map_err(Failure::invalid)?;
        s.push_str(&metrics_report(o));
        let _ = writeln!(s, "artifacts: {}", dir.display());
        s.push('\n');
    }
    Ok(s)
}

fn read_summary(path: &Path) -> Result<Summary, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::invalid)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(Failure::invalid)
}

fn compare_cmd(a: CompareArgs) -> CmdResult {
    let x = read_summary(&a.summary_a)?;
    let y = read_summary(&a.summary_b)?;
    let cmp = compare(&x, &y).map_err(Failure::invalid)?;
    if let Some(path) = &a.out {
        write_output(path, &(cmp.to_json() + "\n"), a.force)?;
    }
    Ok(cmp.to_table())
}

fn timeline(a: TimelineArgs) -> CmdResult {
    let (compute, transfer, capacity) = match (&a.compute, &a.scenario) {
        (Some(c), _) => (c.clone(), a.transfer.clone().unwrap_or_default(), a.capacity),
        (None, Some(path)) => {
            let sc = load_scenario(path)?.scaled();
            let cfg = a.placement.expect("clap requires --placement with --scenario");
            let report = check_feasible(&cfg, &sc.hw, &sc.model, &sc.db);
            if !report.feasible {
                return Err(Failure::infeasible(anyhow!(
                    "{} constraint violated by {cfg}",
                    report.binding().unwrap_or("memory")
                )));
            }
            let phase = match a.phase {
                PhaseArg::Prefill => Phase::Prefill,
                PhaseArg::Decode => Phase::Decode,
            };
            let batch = a.batch.unwrap_or(cfg.gen_batch_size);
            let (c, t) = layer_inputs(&cfg, batch, &sc.hw, &sc.model, phase, &mut Jitter::none());
            (c, t, queue_capacity(&cfg, &sc.hw, &sc.model, phase))
        }
        (None, None) => return Err(Failure::invalid(anyhow!("pass --compute/--transfer or --scenario/--placement"))),
    };
    let tl = simulate_layer_timeline(&compute, &transfer, capacity, a.mode).map_err(Failure::invalid)?;
    let csv = tl.to_csv();
    match &a.out {
        Some(path) => {
            write_output(path, &csv, a.force)?;
            Ok(format!("total {:.6} s, stall {:.6} s; wrote {}\n", tl.total, tl.total_stall, path.display()))
        }
        None => Ok(csv),
    }
}
