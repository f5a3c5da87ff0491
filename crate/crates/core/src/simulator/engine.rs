use super::{Event, EventKind, SerialPolicy, SimConfig, SimError, SimMode, Worker};
use crate::cost_model::{estimate_generation, retrieval_time, Jitter};
use crate::domain::{PlacementConfig, Request, RequestTrace};
use crate::memory_planner::{check_feasible, generation_usage, partition_usage, plan_transfer, DiskResidency, TierUsage};
use crate::scheduler::{choose_generation_batch, choose_retrieval_batch, PolicyTable};
use crate::workload::splitmix64;
use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};

pub(super) struct RawOutcome {
    pub traces: Vec<RequestTrace>,
    pub events: Vec<Event>,
    pub peak: TierUsage,
    pub violations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Time(f64);

impl Eq for Time {}
impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

#[derive(Debug)]
enum Pending {
    Arrival(usize),
    RetrievalDone(Vec<usize>),
    RetrievalIdle,
    GenerationDone(Vec<usize>),
}

struct Scheduled {
    key: (Time, Worker, u64),
    what: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.cmp(&other.key)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Stamps {
    retrieval_start: f64,
    retrieval_end: f64,
    generation_start: f64,
    generation_end: f64,
    done: bool,
}

/// Generation-side state: the active placement and what it reserves.
struct GenState {
    entry: Option<usize>,
    placement: PlacementConfig,
    /// Placement held until the running batch ends (old and new during a switch).
    reserved: TierUsage,
    busy: bool,
    batches: u64,
}

struct RetState {
    partitions: u32,
    target: u32,
    reserved: TierUsage,
    busy: bool,
}

enum Plan<'a> {
    Pipelined(&'a PolicyTable),
    Serial(&'a SerialPolicy),
}

pub(super) struct Engine<'a> {
    cfg: &'a SimConfig,
    plan: Plan<'a>,
    workload: &'a [Request],
    heap: BinaryHeap<Reverse<Scheduled>>,
    next_key: u64,
    events: Vec<Event>,
    stamps: Vec<Stamps>,
    retrieval_queue: VecDeque<usize>,
    context_queue: VecDeque<usize>,
    gen: GenState,
    ret: RetState,
    disk_history: DiskResidency,
    peak: TierUsage,
    violations: usize,
}

impl<'a> Engine<'a> {
    pub fn new(workload: &'a [Request], cfg: &'a SimConfig) -> Result<Self, SimError> {
        let (plan, placement, entry) = match cfg.mode {
            SimMode::Pipelined => {
                let table = cfg.policy.as_ref().filter(|t| !t.entries.is_empty()).ok_or(SimError::MissingPolicy)?;
                table.check_ranges().map_err(SimError::InvalidPolicy)?;
                for (i, e) in table.entries.iter().enumerate() {
                    let report = check_feasible(&e.placement, &cfg.hw, &cfg.model, &cfg.db);
                    if !report.feasible {
                        return Err(SimError::InfeasibleEntry {
                            entry: i,
                            reason: format!(
                                "{} constraint violated by {}",
                                report.binding().unwrap_or("memory"),
                                e.placement
                            ),
                        });
                    }
                }
                (Plan::Pipelined(table), table.entries[0].placement, Some(0))
            }
            SimMode::Serial => {
                let serial = cfg.serial.as_ref().ok_or(SimError::MissingSerialPolicy)?;
                let report = check_feasible(&serial.placement, &cfg.hw, &cfg.model, &cfg.db);
                if !report.feasible {
                    return Err(SimError::InfeasibleSerial(format!(
                        "{} constraint violated by {}",
                        report.binding().unwrap_or("memory"),
                        serial.placement
                    )));
                }
                if serial.max_batch > serial.placement.gen_batch_size {
                    return Err(SimError::InfeasibleSerial(format!(
                        "serial batches of up to {} exceed the provisioned B = {}",
                        serial.max_batch, serial.placement.gen_batch_size
                    )));
                }
                (Plan::Serial(serial), serial.placement, None)
            }
        };
        let mut disk_history = DiskResidency::new();
        disk_history.record(&placement);
        let p = placement.resident_partitions;
        let mut engine = Engine {
            cfg,
            plan,
            workload,
            heap: BinaryHeap::new(),
            next_key: 0,
            events: Vec::new(),
            stamps: vec![Stamps::default(); workload.len()],
            retrieval_queue: VecDeque::new(),
            context_queue: VecDeque::new(),
            gen: GenState {
                entry,
                placement,
                reserved: generation_usage(&placement, &cfg.model),
                busy: false,
                batches: 0,
            },
            ret: RetState {
                partitions: p,
                target: p,
                reserved: partition_usage(p, &cfg.db),
                busy: false,
            },
            disk_history,
            peak: TierUsage::default(),
            violations: 0,
        };
        for (i, r) in workload.iter().enumerate() {
            engine.schedule(r.arrival_time, Worker::Arrival, Pending::Arrival(i));
        }
        Ok(engine)
    }

    fn schedule(&mut self, time: f64, worker: Worker, what: Pending) {
        let key = (Time(time), worker, self.next_key);
        self.next_key += 1;
        self.heap.push(Reverse(Scheduled { key, what }));
    }

    fn log(&mut self, time: f64, worker: Worker, kind: EventKind) {
        let seq = self.events.len() as u64;
        self.events.push(Event { time, seq, worker, kind });
    }

    fn ids(&self, batch: &[usize]) -> Vec<u64> {
        batch.iter().map(|&i| self.workload[i].id).collect()
    }

    pub fn run(mut self) -> Result<RawOutcome, SimError> {
        while let Some(Reverse(first)) = self.heap.pop() {
            let now = first.key.0 .0;
            self.apply(now, first);
            while self.heap.peek().is_some_and(|Reverse(s)| s.key.0 .0 == now) {
                let Reverse(next) = self.heap.pop().expect("peeked");
                self.apply(now, next);
            }
            match self.plan {
                Plan::Pipelined(table) => {
                    self.start_retrieval(now);
                    self.start_generation(now, table)?;
                }
                Plan::Serial(serial) => self.start_serial(now, serial),
            }
            self.check_memory();
        }

        let traces = self
            .stamps
            .iter()
            .zip(self.workload)
            .map(|(s, r)| {
                debug_assert!(s.done, "request {} never completed", r.id);
                RequestTrace {
                    id: r.id,
                    arrival: r.arrival_time,
                    retrieval_start: s.retrieval_start,
                    retrieval_end: s.retrieval_end,
                    generation_start: s.generation_start,
                    generation_end: s.generation_end,
                    completion: s.generation_end,
                }
            })
            .collect();
        Ok(RawOutcome {
            traces,
            events: self.events,
            peak: self.peak,
            violations: self.violations,
        })
    }

    fn apply(&mut self, now: f64, ev: Scheduled) {
        let worker = ev.key.1;
        match ev.what {
            Pending::Arrival(i) => {
                self.retrieval_queue.push_back(i);
                let request = self.workload[i].id;
                self.log(now, worker, EventKind::Arrived { request });
            }
            Pending::RetrievalDone(batch) => {
                let requests = self.ids(&batch);
                self.log(now, worker, EventKind::RetrievalDone { requests });
                match self.plan {
                    Plan::Pipelined(_) => {
                        self.context_queue.extend(batch);
                        self.ret.busy = false;
                        self.ret.reserved = partition_usage(self.ret.partitions, &self.cfg.db);
                    }
                    // the serial worker moves straight on to generation
                    Plan::Serial(_) => self.serial_generate(now, batch),
                }
            }
            Pending::RetrievalIdle => {
                self.ret.busy = false;
                self.ret.reserved = partition_usage(self.ret.partitions, &self.cfg.db);
            }
            Pending::GenerationDone(batch) => {
                for &i in &batch {
                    self.stamps[i].done = true;
                }
                let requests = self.ids(&batch);
                self.log(now, worker, EventKind::Done { requests });
                self.gen.busy = false;
                self.gen.reserved = generation_usage(&self.gen.placement, &self.cfg.model);
                if matches!(self.plan, Plan::Serial(_)) {
                    self.ret.busy = false;
                }
            }
        }
    }

    fn check_memory(&mut self) {
        let usage = self.gen.reserved + self.ret.reserved;
        self.peak = self.peak.max(usage);
        if !usage.fits(&self.cfg.hw) {
            self.violations += 1;
        }
    }

    fn partition_reconfig_seconds(&self, from: u32, to: u32) -> f64 {
        from.abs_diff(to) as f64 * self.cfg.db.partition_bytes as f64 / self.cfg.hw.bw_cpu_disk
    }

    /// Largest partition count between the current one and the target that
    /// fits next to the generation worker's reservation.
    fn reachable_partitions(&self) -> u32 {
        let (cur, target) = (self.ret.partitions, self.ret.target);
        if target <= cur {
            return target;
        }
        (cur + 1..=target)
            .rev()
            .find(|&p| (self.gen.reserved + partition_usage(p, &self.cfg.db)).fits(&self.cfg.hw))
            .unwrap_or(cur)
    }

    fn start_retrieval(&mut self, now: f64) {
        if self.ret.busy {
            return;
        }
        let next_p = self.reachable_partitions();
        if self.retrieval_queue.is_empty() && next_p == self.ret.partitions {
            return;
        }
        let old_p = self.ret.partitions;
        let reconfig = self.partition_reconfig_seconds(old_p, next_p);
        if next_p != old_p {
            self.ret.reserved = partition_usage(old_p, &self.cfg.db).max(partition_usage(next_p, &self.cfg.db));
            self.ret.partitions = next_p;
            self.log(
                now,
                Worker::Retrieval,
                EventKind::Reconfigured {
                    from_entry: None,
                    to_entry: None,
                    from_partitions: old_p,
                    to_partitions: next_p,
                    bytes_gpu_cpu: 0.0,
                    bytes_cpu_disk: old_p.abs_diff(next_p) as f64 * self.cfg.db.partition_bytes as f64,
                    seconds: reconfig,
                },
            );
        }
        self.ret.busy = true;
        if self.retrieval_queue.is_empty() {
            self.schedule(now + reconfig, Worker::Retrieval, Pending::RetrievalIdle);
            return;
        }
        let n = choose_retrieval_batch(self.retrieval_queue.len(), self.cfg.max_retrieval_batch);
        let batch: Vec<usize> = self.retrieval_queue.drain(..n).collect();
        let start = now + reconfig;
        let seconds = retrieval_time(next_p, &self.cfg.db);
        for &i in &batch {
            self.stamps[i].retrieval_start = start;
            self.stamps[i].retrieval_end = start + seconds;
        }
        let requests = self.ids(&batch);
        self.log(
            now,
            Worker::Retrieval,
            EventKind::RetrievalBatched {
                requests,
                resident_partitions: next_p,
                reconfig_seconds: reconfig,
                retrieval_seconds: seconds,
            },
        );
        self.schedule(start + seconds, Worker::Retrieval, Pending::RetrievalDone(batch));
    }

    fn jitter(&mut self) -> Jitter {
        let seed = splitmix64(self.cfg.seed ^ splitmix64(self.gen.batches));
        self.gen.batches += 1;
        Jitter::new(self.cfg.hw.jitter_sigma, seed)
    }

    fn start_generation(&mut self, now: f64, table: &PolicyTable) -> Result<(), SimError> {
        if self.gen.busy || self.context_queue.is_empty() {
            return Ok(());
        }
        let n = self.context_queue.len() as u32;
        let current = self.gen.entry.expect("pipelined mode tracks an entry");
        let (wanted, entry) = table.lookup(n).expect("ranges cover every backlog");
        let mut reconfig = 0.0;
        let mut active = current;
        if wanted != current {
            let old = self.gen.placement;
            let new = entry.placement;
            let model = &self.cfg.model;
            let hold = generation_usage(&old, model).max(generation_usage(&new, model));
            if (hold + self.ret.reserved).fits(&self.cfg.hw) {
                let weights_only = new.with_partitions(old.resident_partitions);
                let plan = plan_transfer(&old, &weights_only, &self.cfg.hw, model, &self.cfg.db, &self.disk_history);
                self.disk_history.record(&new);
                reconfig = plan.duration;
                self.gen.reserved = hold;
                self.gen.placement = new;
                self.gen.entry = Some(wanted);
                active = wanted;
                self.log(
                    now,
                    Worker::Generation,
                    EventKind::Reconfigured {
                        from_entry: Some(current),
                        to_entry: Some(wanted),
                        from_partitions: old.resident_partitions,
                        to_partitions: new.resident_partitions,
                        bytes_gpu_cpu: plan.bytes_gpu_cpu,
                        bytes_cpu_disk: plan.bytes_cpu_disk,
                        seconds: reconfig,
                    },
                );
            } else {
                self.log(
                    now,
                    Worker::Generation,
                    EventKind::ReconfigDeferred {
                        from_entry: current,
                        to_entry: wanted,
                    },
                );
            }
            self.ret.target = entry.placement.resident_partitions;
        }

        let entry = &table.entries[active];
        let backlog: Vec<Request> = self.context_queue.iter().map(|&i| self.workload[i]).collect();
        let decision = choose_generation_batch(
            &backlog,
            now,
            &self.cfg.batch_candidates,
            &entry.fit,
            entry.placement.gen_batch_size,
        )?;
        let take = (decision.chosen_batch as usize).min(self.context_queue.len());
        let batch: Vec<usize> = self.context_queue.drain(..take).collect();
        let mut jitter = self.jitter();
        let seconds = estimate_generation(
            &self.gen.placement,
            take as u32,
            &self.cfg.hw,
            &self.cfg.model,
            self.cfg.prefetch_mode,
            &mut jitter,
        )
        .map_err(|e| SimError::InfeasibleEntry {
            entry: active,
            reason: e.to_string(),
        })?
        .total;
        let start = now + reconfig;
        for &i in &batch {
            self.stamps[i].generation_start = start;
            self.stamps[i].generation_end = start + seconds;
        }
        let requests = self.ids(&batch);
        self.log(
            now,
            Worker::Generation,
            EventKind::GenerationBatched {
                requests,
                backlog: n,
                chosen_batch: decision.chosen_batch,
                entry: Some(active),
                reconfig_seconds: reconfig,
                generation_seconds: seconds,
                predicted_avg_latency: Some(decision.predicted_avg_latency),
            },
        );
        self.gen.busy = true;
        self.schedule(start + seconds, Worker::Generation, Pending::GenerationDone(batch));
        Ok(())
    }

    fn start_serial(&mut self, now: f64, serial: &SerialPolicy) {
        // one worker: `ret.busy` covers the whole retrieval + generation span
        if self.ret.busy || self.retrieval_queue.is_empty() {
            return;
        }
        let n = serial.batch_limit(now).min(self.retrieval_queue.len());
        let batch: Vec<usize> = self.retrieval_queue.drain(..n).collect();
        let p = self.ret.partitions;
        let seconds = retrieval_time(p, &self.cfg.db);
        for &i in &batch {
            self.stamps[i].retrieval_start = now;
            self.stamps[i].retrieval_end = now + seconds;
        }
        let requests = self.ids(&batch);
        self.log(
            now,
            Worker::Retrieval,
            EventKind::RetrievalBatched {
                requests,
                resident_partitions: p,
                reconfig_seconds: 0.0,
                retrieval_seconds: seconds,
            },
        );
        self.ret.busy = true;
        self.schedule(now + seconds, Worker::Retrieval, Pending::RetrievalDone(batch));
    }

    fn serial_generate(&mut self, now: f64, batch: Vec<usize>) {
        let mut jitter = self.jitter();
        let seconds = estimate_generation(
            &self.gen.placement,
            batch.len() as u32,
            &self.cfg.hw,
            &self.cfg.model,
            self.cfg.prefetch_mode,
            &mut jitter,
        )
        .expect("serial placement checked feasible up front")
        .total;
        for &i in &batch {
            self.stamps[i].generation_start = now;
            self.stamps[i].generation_end = now + seconds;
        }
        let requests = self.ids(&batch);
        let size = batch.len() as u32;
        self.log(
            now,
            Worker::Generation,
            EventKind::GenerationBatched {
                requests,
                backlog: size,
                chosen_batch: size,
                entry: None,
                reconfig_seconds: 0.0,
                generation_seconds: seconds,
                predicted_avg_latency: None,
            },
        );
        self.gen.busy = true;
        self.schedule(now + seconds, Worker::Generation, Pending::GenerationDone(batch));
    }
}
