//! The discrete-event engine.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde_json::json;

use crate::baselines::{
    checkpoint_floor, moldable_place, moldable_shape, monolithic_place, preempt_migrate_step,
    transfer_delay, BaselineKind, PreemptAction, QueuedJob, RunningJob,
};
use crate::cluster::{ClusterState, Holder, SliceCatalog, SliceId};
use crate::config::{SchedulerKind, SimConfig};
use crate::error::{Error, Result};
use crate::eventlog::{EventLog, LogKind, LogRecord};
use crate::policies::TenantLedger;
use crate::profiles::{AdmissionMethod, FunctionalProfile};
use crate::protocol::{scheduling_round, IdCounters, JobView, ProtocolEvent, RoundConfig};
use crate::rng::{self, SimRng};
use crate::trajectory::{cells_in, CellRange, Trajectory};
use crate::workload::{
    Checkpoint, ExtentCache, JobPlanState, PlanParams, Scenario, SubJob, SubJobStatus,
};
use crate::{Megabytes, Seconds};

use super::metrics::{compute, ExecRecord, JobOutcome, MetricsInput, MetricsReport};

#[derive(Clone, Copy, Debug, PartialEq)]
enum EvKind {
    End(usize),
    Oom {
        exec: usize,
        cell: usize,
        mem: Megabytes,
    },
    Failure,
    MigrationDone(usize),
    Arrival(usize),
    Start(usize),
    Timer,
    Expire(usize),
}

impl EvKind {
    /// Tie-break class at equal times: completions and kills free capacity
    /// before anything else looks at the cluster.
    fn class(&self) -> u8 {
        match self {
            EvKind::End(_) | EvKind::Oom { .. } => 0,
            EvKind::Failure | EvKind::MigrationDone(_) => 1,
            EvKind::Arrival(_) => 2,
            EvKind::Start(_) => 3,
            EvKind::Timer | EvKind::Expire(_) => 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: Seconds,
    class: u8,
    seq: u64,
    kind: EvKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.class.cmp(&self.class))
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ExecStatus {
    Planned,
    Running,
    Done,
    Oom,
    Failed,
    Preempted,
    Cancelled,
}

#[derive(Clone, Debug)]
struct Exec {
    job: usize,
    /// Present for SJA subjobs; monolithic placements have none.
    subjob: Option<SubJob>,
    chain: u64,
    slice: SliceId,
    capacity: Megabytes,
    start: Seconds,
    /// Scheduled end of the occupancy; infinite for monolithic placements.
    planned_end: Seconds,
    work_from: Seconds,
    work_to: Seconds,
    speed: f64,
    status: ExecStatus,
    end: Option<Seconds>,
    busy_end: Option<Seconds>,
}

impl Exec {
    fn holder(&self) -> Holder {
        match &self.subjob {
            Some(s) => Holder::Subjob(s.subjob_id.0),
            None => Holder::Job(self.job),
        }
    }

    fn position(&self, now: Seconds) -> Seconds {
        (self.work_from + (now - self.start).max(0.0) * self.speed).min(self.work_to)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Terminal {
    Completed,
    Rejected,
}

#[derive(Clone, Debug)]
struct JobState {
    arrived: bool,
    terminal: Option<Terminal>,
    migrating: bool,
    /// Committed (checkpointed) work seconds.
    progress: Seconds,
    /// Work covered by committed progress plus planned subjobs.
    planned: Seconds,
    /// Planned or running executions, in chain order.
    active: Vec<usize>,
    running: Option<usize>,
    checkpoint: Option<Checkpoint>,
    oom_marks: Vec<(usize, Megabytes)>,
    demand: Megabytes,
    first_start: Option<Seconds>,
    first_grant_ok: Option<Option<bool>>,
    finish: Option<Seconds>,
    reexecuted: Seconds,
    executions: usize,
}

pub(crate) struct Engine<'a> {
    sc: &'a Scenario,
    cfg: &'a SimConfig,
    kind: SchedulerKind,
    seed: u64,
    g: Seconds,
    cluster: ClusterState,
    catalog: SliceCatalog,
    jobs: Vec<JobState>,
    actual: Vec<Trajectory>,
    job_ens: Vec<usize>,
    profiles: Vec<FunctionalProfile>,
    caches: Vec<ExtentCache>,
    execs: Vec<Exec>,
    heap: BinaryHeap<Event>,
    next_seq: u64,
    log: EventLog,
    ledger: TenantLedger,
    ids: IdCounters,
    next_chain: u64,
    failure_rng: SimRng,
    dirty: bool,
    timer_pending: bool,
    idle_spans: Vec<(Seconds, Seconds, Megabytes)>,
    interruptions: u64,
    oom_kills: u64,
    injected: u64,
    /// Subjobs checked under both admission methods, and how many disagreed.
    admission_checks: (u64, u64),
    now: Seconds,
}

fn profile_for(
    src: &crate::workload::EnsembleSource,
    cfg: &SimConfig,
) -> Result<FunctionalProfile> {
    let levels = [cfg.risk.eps];
    if src.ensemble.len() == 1 {
        FunctionalProfile::deterministic(
            &src.ensemble.trajectory(0),
            cfg.single_run_inflation,
            &levels,
        )
    } else {
        FunctionalProfile::build(src.ensemble.clone(), &levels)
    }
}

impl<'a> Engine<'a> {
    pub(crate) fn new(
        sc: &'a Scenario,
        cfg: &'a SimConfig,
        kind: SchedulerKind,
        seed: u64,
    ) -> Result<Self> {
        let layout = cfg.cluster.layout()?;
        let cluster = ClusterState::new(&layout)?;
        let g = sc.grid_step();
        let keys: Vec<&String> = sc.ensembles.keys().collect();
        let job_ens = sc
            .jobs
            .iter()
            .map(|j| {
                keys.iter()
                    .position(|k| **k == j.ensemble)
                    .expect("scenario links are validated")
            })
            .collect();
        let profiles = if kind == SchedulerKind::Sja {
            sc.ensembles
                .values()
                .map(|src| profile_for(src, cfg))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let caches = profiles.iter().map(|_| ExtentCache::new()).collect();
        let actual = (0..sc.jobs.len())
            .map(|i| sc.actual_trajectory(i, seed))
            .collect::<Result<Vec<_>>>()?;
        let jobs = sc
            .jobs
            .iter()
            .map(|j| JobState {
                arrived: false,
                terminal: None,
                migrating: false,
                progress: 0.0,
                planned: 0.0,
                active: Vec::new(),
                running: None,
                checkpoint: None,
                oom_marks: Vec::new(),
                demand: j.declared_peak,
                first_start: None,
                first_grant_ok: None,
                finish: None,
                reexecuted: 0.0,
                executions: 0,
            })
            .collect();
        Ok(Engine {
            sc,
            cfg,
            kind,
            seed,
            g,
            catalog: cluster.catalog().clone(),
            cluster,
            jobs,
            actual,
            job_ens,
            profiles,
            caches,
            execs: Vec::new(),
            heap: BinaryHeap::new(),
            next_seq: 0,
            log: EventLog::new(),
            ledger: TenantLedger::new(&cfg.tokens),
            ids: IdCounters::default(),
            next_chain: 0,
            failure_rng: rng::stream(seed, rng::label_hash("failures")),
            dirty: false,
            timer_pending: false,
            idle_spans: Vec::new(),
            interruptions: 0,
            oom_kills: 0,
            injected: 0,
            admission_checks: (0, 0),
            now: 0.0,
        })
    }

    fn push(&mut self, time: Seconds, kind: EvKind) {
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event {
            time,
            class: kind.class(),
            seq,
            kind,
        });
    }

    fn record(&mut self, r: LogRecord) {
        self.log.push(r);
    }

    fn total_work(&self, job: usize) -> Seconds {
        self.sc.jobs[job].total_work
    }

    fn done_planning(&self, job: usize) -> bool {
        self.jobs[job].planned >= self.total_work(job) - 0.5 * self.g
    }

    fn waiting(&self, job: usize) -> bool {
        let j = &self.jobs[job];
        j.arrived && j.terminal.is_none() && j.running.is_none() && !j.migrating
    }

    fn all_terminal(&self) -> bool {
        self.jobs.iter().all(|j| j.terminal.is_some())
    }

    fn is_monolithic(&self, job: usize) -> bool {
        self.kind != SchedulerKind::Sja || !self.sc.jobs[job].atomizable
    }

    pub(crate) fn run(mut self) -> Result<(MetricsReport, EventLog)> {
        for (i, j) in self.sc.jobs.iter().enumerate() {
            self.push(j.arrival, EvKind::Arrival(i));
            if self.cfg.max_wait.is_finite() {
                self.push(j.arrival + self.cfg.max_wait, EvKind::Expire(i));
            }
        }
        if self.cfg.failure_rate > 0.0 && !self.sc.jobs.is_empty() {
            self.schedule_failure(0.0);
        }
        let makespan = loop {
            if let Some(ev) = self.heap.peek() {
                if ev.time <= self.now {
                    let ev = self.heap.pop().expect("peeked");
                    self.handle(ev)?;
                    continue;
                }
            }
            if self.dirty {
                self.dirty = false;
                self.round()?;
                continue;
            }
            if !self.all_terminal() {
                self.stall_check();
            }
            if self.all_terminal() {
                break self.now;
            }
            self.ensure_timer();
            let Some(ev) = self.heap.pop() else {
                break self.now;
            };
            if ev.time > self.cfg.time_cap {
                return Err(Error::Timeout {
                    cap: self.cfg.time_cap,
                });
            }
            self.account_idle(ev.time);
            self.now = ev.time;
            self.handle(ev)?;
        };
        Ok(self.finish(makespan))
    }

    fn account_idle(&mut self, until: Seconds) {
        if until <= self.now || !(0..self.jobs.len()).any(|j| self.waiting(j)) {
            return;
        }
        let busy: BTreeSet<SliceId> = self
            .execs
            .iter()
            .filter(|e| e.status == ExecStatus::Running)
            .map(|e| e.slice)
            .collect();
        let idle: f64 = self
            .cluster
            .slices()
            .iter()
            .filter(|s| !busy.contains(&s.slice_id))
            .map(|s| s.capacity)
            .sum();
        if idle > 0.0 {
            self.idle_spans.push((self.now, until, idle));
        }
    }

    fn ensure_timer(&mut self) {
        if self.timer_pending {
            return;
        }
        let needs = (0..self.jobs.len()).any(|j| self.waiting(j) && !self.done_planning(j));
        if needs {
            self.timer_pending = true;
            self.push(self.now + self.cfg.round_interval, EvKind::Timer);
        }
    }

    /// Rejects every waiting job once nothing can change the cluster any more.
    fn stall_check(&mut self) {
        let busy = self
            .execs
            .iter()
            .any(|e| matches!(e.status, ExecStatus::Running | ExecStatus::Planned));
        let pending = self.jobs.iter().any(|j| !j.arrived || j.migrating);
        if busy || pending {
            return;
        }
        for j in 0..self.jobs.len() {
            if self.waiting(j) {
                self.reject(j, "stalled: no admissible placement");
            }
        }
    }

    fn reject(&mut self, job: usize, reason: &str) {
        self.cancel_planned(job);
        let j = &mut self.jobs[job];
        j.terminal = Some(Terminal::Rejected);
        j.finish = Some(self.now);
        let id = self.sc.jobs[job].job_id.clone();
        self.record(
            LogRecord::new(self.now, LogKind::JobReject)
                .job(id)
                .payload(json!({ "reason": reason })),
        );
    }

    fn schedule_failure(&mut self, from: Seconds) {
        let exp = Exp::new(self.cfg.failure_rate / 3600.0).expect("rate validated > 0");
        let dt: f64 = exp.sample(&mut self.failure_rng);
        self.push(from + dt, EvKind::Failure);
    }

    fn handle(&mut self, ev: Event) -> Result<()> {
        match ev.kind {
            EvKind::Arrival(j) => self.on_arrival(j),
            EvKind::Start(e) => self.on_start(e)?,
            EvKind::End(e) => self.on_end(e)?,
            EvKind::Oom { exec, cell, mem } => self.on_oom(exec, cell, mem)?,
            EvKind::Failure => self.on_failure()?,
            EvKind::MigrationDone(j) => {
                self.jobs[j].migrating = false;
                let id = self.sc.jobs[j].job_id.clone();
                self.record(LogRecord::new(self.now, LogKind::MigrationDone).job(id));
                self.dirty = true;
            }
            EvKind::Timer => {
                self.timer_pending = false;
                self.dirty = true;
            }
            EvKind::Expire(j) => {
                let st = &self.jobs[j];
                if st.terminal.is_none() && st.first_start.is_none() && st.active.is_empty() {
                    self.reject(j, "max_wait exceeded");
                }
            }
        }
        Ok(())
    }

    fn on_arrival(&mut self, job: usize) {
        self.jobs[job].arrived = true;
        let spec = &self.sc.jobs[job];
        self.record(
            LogRecord::new(self.now, LogKind::Arrival)
                .job(spec.job_id.clone())
                .payload(json!({
                    "tenant": spec.tenant_id,
                    "total_work": spec.total_work,
                    "declared_peak": spec.declared_peak,
                    "atomizable": spec.atomizable,
                })),
        );
        if self.is_monolithic(job) {
            let fits = match self.kind {
                SchedulerKind::Moldable => {
                    moldable_shape(self.jobs[job].demand, &self.cluster).is_some()
                }
                _ => self.jobs[job].demand <= self.cluster.max_slice_capacity(),
            };
            if !fits {
                self.reject(job, "declared peak exceeds every slice");
                return;
            }
        }
        self.dirty = true;
    }

    // ---- rounds ------------------------------------------------------------

    fn round(&mut self) -> Result<()> {
        self.cluster.prune(self.now);
        match self.kind {
            SchedulerKind::Sja => {
                self.monolithic_round(BaselineKind::FirstFit)?;
                self.sja_round()
            }
            SchedulerKind::FirstFit => self.monolithic_round(BaselineKind::FirstFit),
            SchedulerKind::BestFit => self.monolithic_round(BaselineKind::BestFit),
            SchedulerKind::Moldable => self.monolithic_round(BaselineKind::Moldable),
            SchedulerKind::Preempt => self.monolithic_round(BaselineKind::PreemptMigrate),
        }
    }

    fn queue(&self) -> Vec<QueuedJob> {
        (0..self.jobs.len())
            .filter(|&j| self.waiting(j) && self.is_monolithic(j))
            .map(|j| {
                let s = &self.sc.jobs[j];
                QueuedJob {
                    job: j,
                    job_id: s.job_id.clone(),
                    demand: self.jobs[j].demand,
                    priority: s.priority,
                    arrival: s.arrival,
                }
            })
            .collect()
    }

    fn monolithic_round(&mut self, kind: BaselineKind) -> Result<()> {
        let queue = self.queue();
        if queue.is_empty() {
            return Ok(());
        }
        let now = self.now;
        let actions: Vec<PreemptAction> = match kind {
            BaselineKind::FirstFit | BaselineKind::BestFit => {
                monolithic_place(&queue, &self.cluster, now, kind)
                    .into_iter()
                    .map(PreemptAction::Place)
                    .collect()
            }
            BaselineKind::Moldable => moldable_place(&queue, &self.cluster, now)
                .into_iter()
                .map(PreemptAction::Place)
                .collect(),
            BaselineKind::PreemptMigrate => {
                let running: Vec<RunningJob> = self
                    .execs
                    .iter()
                    .filter(|e| e.status == ExecStatus::Running && e.subjob.is_none())
                    .map(|e| RunningJob {
                        job: e.job,
                        slice: e.slice,
                        priority: self.sc.jobs[e.job].priority,
                        start: e.start,
                    })
                    .collect();
                preempt_migrate_step(&running, &queue, &self.cluster, now)
            }
        };
        for a in actions {
            match a {
                PreemptAction::Place(p) => self.place(p.job, p.slice)?,
                PreemptAction::Preempt {
                    victim,
                    slice,
                    for_job,
                } => self.preempt(victim, slice, for_job)?,
            }
        }
        Ok(())
    }

    fn place(&mut self, job: usize, slice: SliceId) -> Result<()> {
        let capacity = self.cluster.slice(slice).capacity;
        let speed = if self.kind == SchedulerKind::Moldable {
            self.cfg.speedup.multiplier(capacity)
        } else {
            1.0
        };
        self.cluster
            .reserve(slice, self.now, f64::INFINITY, Holder::Job(job))?;
        let idx = self.execs.len();
        self.execs.push(Exec {
            job,
            subjob: None,
            chain: 0,
            slice,
            capacity,
            start: self.now,
            planned_end: f64::INFINITY,
            work_from: self.jobs[job].progress,
            work_to: self.total_work(job),
            speed,
            status: ExecStatus::Planned,
            end: None,
            busy_end: None,
        });
        self.jobs[job].active.push(idx);
        let id = self.sc.jobs[job].job_id.clone();
        self.record(
            LogRecord::new(self.now, LogKind::Place)
                .job(id)
                .slice(slice.0)
                .payload(json!({
                    "capacity": capacity,
                    "demand": self.jobs[job].demand,
                    "work_from": self.jobs[job].progress,
                    "speed": speed,
                })),
        );
        self.begin(idx);
        Ok(())
    }

    fn preempt(&mut self, victim: usize, slice: SliceId, for_job: usize) -> Result<()> {
        let e = self.jobs[victim].running.expect("victim is running");
        let now = self.now;
        let pos = self.execs[e].position(now);
        let floor = checkpoint_floor(
            pos,
            self.execs[e].work_from,
            self.cfg.migration.ckpt_interval,
        );
        let lost = pos - floor;
        self.stop_exec(e, ExecStatus::Preempted)?;
        let j = &mut self.jobs[victim];
        j.progress = floor;
        j.planned = floor;
        j.reexecuted += lost;
        j.migrating = true;
        let live = self.live_memory(victim, pos);
        let delay = transfer_delay(live, &self.cfg.migration);
        self.interruptions += 1;
        let id = self.sc.jobs[victim].job_id.clone();
        let for_id = self.sc.jobs[for_job].job_id.clone();
        self.record(
            LogRecord::new(now, LogKind::Preempt)
                .job(id)
                .slice(slice.0)
                .payload(json!({
                    "for_job": for_id,
                    "lost_work": lost,
                    "resume_from": floor,
                    "live_state_mb": live,
                    "transfer_delay": delay,
                })),
        );
        self.push(now + delay, EvKind::MigrationDone(victim));
        Ok(())
    }

    fn live_memory(&self, job: usize, pos: Seconds) -> Megabytes {
        let s = self.actual[job].samples();
        let c = ((pos / self.g) + 1e-9).floor() as usize;
        s.get(c).or(s.last()).copied().unwrap_or(0.0)
    }

    fn sja_round(&mut self) -> Result<()> {
        let now = self.now;
        let max_chains = self.cfg.max_concurrent_subjobs_per_job;
        let eligible: Vec<usize> = (0..self.jobs.len())
            .filter(|&j| {
                let st = &self.jobs[j];
                st.arrived
                    && st.terminal.is_none()
                    && self.sc.jobs[j].atomizable
                    && !self.done_planning(j)
                    && self.chains(j) < max_chains
            })
            .collect();
        if eligible.is_empty() {
            return Ok(());
        }
        let events = {
            let jobs = &self.jobs;
            let execs = &self.execs;
            let views: Vec<JobView<'_>> = eligible
                .iter()
                .map(|&j| {
                    let st = &jobs[j];
                    let e = self.job_ens[j];
                    let chain_end = st
                        .active
                        .iter()
                        .map(|&x| execs[x].planned_end)
                        .fold(now, f64::max);
                    JobView {
                        index: j,
                        plan: JobPlanState {
                            job: &self.sc.jobs[j],
                            profile: &self.profiles[e],
                            cache: Some(&self.caches[e]),
                            progress: st.planned,
                            not_before: chain_end,
                            oom_marks: &st.oom_marks,
                        },
                        checkpoint: st.checkpoint.as_ref(),
                    }
                })
                .collect();
            let rc = RoundConfig {
                now,
                lookahead: self.cfg.lookahead,
                offer_ttl: self.cfg.offer_ttl,
                policy: self.cfg.policy,
                tokens: &self.cfg.tokens,
                alpha_t: self.cfg.risk.alpha_t,
                params: PlanParams {
                    catalog: &self.catalog,
                    risk: self.cfg.risk,
                    seg: &self.cfg.seg,
                    method: self.cfg.admission,
                },
            };
            scheduling_round(
                &mut self.cluster,
                &views,
                &mut self.ledger,
                &mut self.ids,
                &rc,
            )?
        };
        let mut chain_of_offer: Option<(u64, u64)> = None;
        for ev in events {
            match ev {
                ProtocolEvent::Offer(o) => self.record(
                    LogRecord::new(now, LogKind::Offer)
                        .offer(o.offer_id)
                        .slice(o.window.slice_id.0)
                        .payload(json!({
                            "start": o.window.start,
                            "duration": o.window.duration,
                            "capacity": o.window.capacity,
                            "expires_at": o.expires_at,
                        })),
                ),
                ProtocolEvent::Interest(s) => self.record(
                    LogRecord::new(now, LogKind::Interest)
                        .offer(s.offer_id)
                        .job(s.job_id)
                        .payload(json!({
                            "planned_duration": s.planned_duration,
                            "preferences": s.preferences,
                        })),
                ),
                ProtocolEvent::Declines { offer_id, count } => self.record(
                    LogRecord::new(now, LogKind::Declines)
                        .offer(offer_id)
                        .payload(json!({ "count": count })),
                ),
                ProtocolEvent::Grant(gr) => {
                    let st = &mut self.jobs[gr.job_index];
                    if st.first_grant_ok.is_none() {
                        st.first_grant_ok = Some(gr.deadline_ok);
                    }
                    self.record(
                        LogRecord::new(now, LogKind::Grant)
                            .offer(gr.offer_id)
                            .job(gr.job_id)
                            .payload(json!({
                                "cost": gr.cost,
                                "deadline_ok": gr.deadline_ok,
                                "expires_at": gr.expires_at,
                            })),
                    );
                }
                ProtocolEvent::MaterializeRefused {
                    offer_id,
                    job_id,
                    reason,
                } => self.record(
                    LogRecord::new(now, LogKind::MaterializeRefused)
                        .offer(offer_id)
                        .job(job_id)
                        .payload(json!({ "reason": reason })),
                ),
                ProtocolEvent::OfferLapsed { offer_id } => {
                    self.record(LogRecord::new(now, LogKind::OfferExpire).offer(offer_id))
                }
                ProtocolEvent::SubjobCreated(sj) => {
                    let chain = match chain_of_offer {
                        Some((o, c)) if o == sj.offer_id => c,
                        _ => {
                            self.next_chain += 1;
                            chain_of_offer = Some((sj.offer_id, self.next_chain));
                            self.next_chain
                        }
                    };
                    self.add_subjob(sj, chain)?;
                }
            }
        }
        Ok(())
    }

    fn chains(&self, job: usize) -> usize {
        let set: BTreeSet<u64> = self.jobs[job]
            .active
            .iter()
            .map(|&e| self.execs[e].chain)
            .collect();
        set.len()
    }

    /// Judges a subjob under both admission methods at the capacity the
    /// envelope-based segmentation assigned it.
    fn dual_admission(&mut self, sj: &SubJob) -> Result<(Option<bool>, Option<bool>)> {
        let profile = &self.profiles[self.job_ens[sj.parent_index]];
        if profile.source().is_none() {
            return Ok((None, None));
        }
        let cells = CellRange::new(cells_in(sj.work_from, self.g), cells_in(sj.work_to, self.g));
        let eps = self.cfg.risk.eps;
        let cap = sj.assigned_capacity;
        let joint = profile.memory_admissible_cells(cap, cells, eps, AdmissionMethod::Joint)?;
        let env = profile.memory_admissible_cells(cap, cells, eps, AdmissionMethod::Envelope)?;
        self.admission_checks.0 += 1;
        self.admission_checks.1 += u64::from(joint.admissible != env.admissible);
        Ok((Some(joint.admissible), Some(env.admissible)))
    }

    fn add_subjob(&mut self, sj: SubJob, chain: u64) -> Result<()> {
        let job = sj.parent_index;
        let idx = self.execs.len();
        let (joint_ok, envelope_ok) = self.dual_admission(&sj)?;
        self.record(
            LogRecord::new(self.now, LogKind::SubjobCreate)
                .job(sj.parent.clone())
                .subjob(sj.subjob_id.0)
                .offer(sj.offer_id)
                .slice(sj.slice_id.0)
                .payload(json!({
                    "start": sj.start,
                    "end": sj.end(),
                    "slice_capacity": sj.slice_capacity,
                    "assigned_capacity": sj.assigned_capacity,
                    "work_from": sj.work_from,
                    "work_to": sj.work_to,
                    "predicted_peak": sj.predicted_peak,
                    "joint_ok": joint_ok,
                    "envelope_ok": envelope_ok,
                })),
        );
        self.jobs[job].planned = sj.work_to;
        self.jobs[job].active.push(idx);
        self.push(sj.start, EvKind::Start(idx));
        self.execs.push(Exec {
            job,
            chain,
            slice: sj.slice_id,
            capacity: sj.slice_capacity,
            start: sj.start,
            planned_end: sj.end(),
            work_from: sj.work_from,
            work_to: sj.work_to,
            speed: 1.0,
            status: ExecStatus::Planned,
            end: None,
            busy_end: None,
            subjob: Some(sj),
        });
        Ok(())
    }

    // ---- execution ---------------------------------------------------------

    fn on_start(&mut self, e: usize) -> Result<()> {
        if self.execs[e].status != ExecStatus::Planned {
            return Ok(());
        }
        let (job, id, slice) = {
            let x = &self.execs[e];
            (x.job, x.subjob.as_ref().map(|s| s.subjob_id.0), x.slice)
        };
        let mut r = LogRecord::new(self.now, LogKind::SubjobStart)
            .job(self.sc.jobs[job].job_id.clone())
            .slice(slice.0);
        if let Some(id) = id {
            r = r.subjob(id);
        }
        self.record(r.payload(json!({ "work_from": self.execs[e].work_from })));
        self.begin(e);
        Ok(())
    }

    /// Marks an execution running and schedules its end or its OOM kill.
    fn begin(&mut self, e: usize) {
        let now = self.now;
        let g = self.g;
        let x = &mut self.execs[e];
        x.status = ExecStatus::Running;
        let job = x.job;
        let c0 = cells_in(x.work_from, g);
        let c1 = cells_in(x.work_to, g);
        let s = self.actual[job].samples();
        let exceed = (c0..c1).find(|&c| s.get(c).copied().unwrap_or(0.0) > x.capacity);
        let work_end = x.start + (x.work_to - x.work_from) / x.speed;
        let end = if x.subjob.is_some()
            && work_end >= x.planned_end - 1e-9 * x.planned_end.abs().max(1.0)
        {
            x.planned_end
        } else {
            work_end
        };
        let kind = match exceed {
            Some(c) => {
                let at = x.start + ((c as f64 * g - x.work_from).max(0.0)) / x.speed;
                (
                    at,
                    EvKind::Oom {
                        exec: e,
                        cell: c,
                        mem: s[c],
                    },
                )
            }
            None => (end, EvKind::End(e)),
        };
        let st = &mut self.jobs[job];
        st.running = Some(e);
        st.executions += 1;
        st.first_start.get_or_insert(now);
        self.push(kind.0.max(now), kind.1);
    }

    /// Ends an execution at `now`, releasing its slice.
    fn stop_exec(&mut self, e: usize, status: ExecStatus) -> Result<()> {
        let now = self.now;
        let x = &mut self.execs[e];
        x.status = status;
        x.end = Some(now);
        x.busy_end = Some(now);
        let holder = x.holder();
        let job = x.job;
        if x.subjob.is_some() {
            if let Some(sj) = x.subjob.as_mut() {
                sj.status = match status {
                    ExecStatus::Done => SubJobStatus::Completed,
                    ExecStatus::Oom => SubJobStatus::FailedOom,
                    ExecStatus::Failed => SubJobStatus::FailedInjected,
                    _ => SubJobStatus::Cancelled,
                };
            }
            if now < x.planned_end {
                self.cluster.release_tail(holder, now)?;
            }
        } else {
            self.cluster.cancel(holder)?;
        }
        let st = &mut self.jobs[job];
        st.running = None;
        st.active.retain(|&a| a != e);
        Ok(())
    }

    fn cancel_planned(&mut self, job: usize) {
        let planned: Vec<usize> = self.jobs[job]
            .active
            .iter()
            .copied()
            .filter(|&a| self.execs[a].status == ExecStatus::Planned)
            .collect();
        for a in planned {
            let x = &mut self.execs[a];
            x.status = ExecStatus::Cancelled;
            if let Some(sj) = x.subjob.as_mut() {
                sj.status = SubJobStatus::Cancelled;
            }
            let _ = self.cluster.cancel(x.holder());
        }
        let execs = &self.execs;
        self.jobs[job]
            .active
            .retain(|&a| execs[a].status != ExecStatus::Cancelled);
    }

    fn on_end(&mut self, e: usize) -> Result<()> {
        if self.execs[e].status != ExecStatus::Running {
            return Ok(());
        }
        let now = self.now;
        let job = self.execs[e].job;
        let work_to = self.execs[e].work_to;
        let subjob = self.execs[e].subjob.as_ref().map(|s| s.subjob_id.0);
        // the occupancy of a padded subjob lasts until its work is done
        self.stop_exec(e, ExecStatus::Done)?;
        let spec = &self.sc.jobs[job];
        let st = &mut self.jobs[job];
        st.progress = work_to;
        st.planned = st.planned.max(work_to);
        if let Some(id) = subjob {
            let frac = (work_to / spec.total_work).min(1.0);
            st.checkpoint = Some(Checkpoint {
                parent: spec.job_id.clone(),
                completed_fraction: frac,
                size: spec.checkpoint_size,
                created_at: now,
            });
            let jid = spec.job_id.clone();
            let size = spec.checkpoint_size;
            self.record(
                LogRecord::new(now, LogKind::SubjobEnd)
                    .job(jid.clone())
                    .subjob(id),
            );
            self.record(
                LogRecord::new(now, LogKind::Checkpoint)
                    .job(jid)
                    .subjob(id)
                    .payload(json!({ "completed_fraction": frac, "size": size })),
            );
        }
        if self.jobs[job].progress >= self.total_work(job) - 0.5 * self.g {
            self.complete(job)?;
        }
        self.dirty = true;
        Ok(())
    }

    fn complete(&mut self, job: usize) -> Result<()> {
        self.cancel_planned(job);
        let now = self.now;
        let st = &mut self.jobs[job];
        st.terminal = Some(Terminal::Completed);
        st.finish = Some(now);
        let spec = &self.sc.jobs[job];
        self.record(LogRecord::new(now, LogKind::JobComplete).job(spec.job_id.clone()));
        if self.kind == SchedulerKind::Sja && self.cfg.online_correction {
            let e = self.job_ens[job];
            self.profiles[e] = self.profiles[e].refresh(&self.actual[job])?;
            self.caches[e].clear();
            let runs = self.profiles[e].source().map_or(0, |s| s.len());
            self.record(
                LogRecord::new(now, LogKind::ProfileRefresh)
                    .job(spec.job_id.clone())
                    .payload(json!({ "ensemble": spec.ensemble, "runs": runs })),
            );
        }
        Ok(())
    }

    /// Where a killed execution resumes from.
    fn rollback_point(&self, e: usize) -> Seconds {
        let x = &self.execs[e];
        if x.subjob.is_some() {
            x.work_from
        } else if self.kind == SchedulerKind::Preempt {
            checkpoint_floor(
                x.position(self.now),
                x.work_from,
                self.cfg.migration.ckpt_interval,
            )
        } else {
            0.0
        }
    }

    fn kill(&mut self, e: usize, status: ExecStatus) -> Result<Seconds> {
        let job = self.execs[e].job;
        let pos = self.execs[e].position(self.now);
        let back = self.rollback_point(e);
        self.stop_exec(e, status)?;
        self.cancel_planned(job);
        let st = &mut self.jobs[job];
        let lost = pos - back;
        st.reexecuted += lost;
        st.progress = back;
        st.planned = back;
        self.dirty = true;
        Ok(lost)
    }

    fn on_oom(&mut self, e: usize, cell: usize, mem: Megabytes) -> Result<()> {
        if self.execs[e].status != ExecStatus::Running {
            return Ok(());
        }
        self.oom_kills += 1;
        let job = self.execs[e].job;
        let capacity = self.execs[e].capacity;
        let subjob = self.execs[e].subjob.as_ref().map(|s| s.subjob_id.0);
        let lost = self.kill(e, ExecStatus::Oom)?;
        let mut r = LogRecord::new(self.now, LogKind::OomKill)
            .job(self.sc.jobs[job].job_id.clone())
            .slice(self.execs[e].slice.0)
            .payload(
                json!({ "cell": cell, "memory": mem, "capacity": capacity, "lost_work": lost }),
            );
        if let Some(id) = subjob {
            r = r.subjob(id);
        }
        self.record(r);
        if subjob.is_some() {
            self.jobs[job].oom_marks.push((cell, mem));
        } else {
            let st = &mut self.jobs[job];
            st.demand = st.demand.max(mem);
            let fits = match self.kind {
                SchedulerKind::Moldable => moldable_shape(st.demand, &self.cluster).is_some(),
                _ => st.demand <= self.cluster.max_slice_capacity(),
            };
            if !fits {
                self.reject(job, "observed memory exceeds every slice");
            }
        }
        Ok(())
    }

    fn on_failure(&mut self) -> Result<()> {
        if self.all_terminal() {
            return Ok(());
        }
        let running: Vec<usize> = (0..self.execs.len())
            .filter(|&e| self.execs[e].status == ExecStatus::Running)
            .collect();
        if !running.is_empty() {
            let e = running[self.failure_rng.random_range(0..running.len())];
            self.injected += 1;
            let x = &self.execs[e];
            let job = x.job;
            let planned_length = x.subjob.as_ref().map(|s| s.work_to - s.work_from);
            let subjob = x.subjob.as_ref().map(|s| s.subjob_id.0);
            let slice = x.slice;
            let lost = self.kill(e, ExecStatus::Failed)?;
            let mut r = LogRecord::new(self.now, LogKind::FailureInject)
                .job(self.sc.jobs[job].job_id.clone())
                .slice(slice.0)
                .payload(json!({ "lost_work": lost, "planned_length": planned_length }));
            if let Some(id) = subjob {
                r = r.subjob(id);
            }
            self.record(r);
        }
        self.schedule_failure(self.now);
        Ok(())
    }

    // ---- results -----------------------------------------------------------

    fn finish(self, makespan: Seconds) -> (MetricsReport, EventLog) {
        let execs: Vec<ExecRecord> = self
            .execs
            .iter()
            .filter(|x| x.end.is_some())
            .map(|x| ExecRecord {
                job: x.job,
                capacity: x.capacity,
                start: x.start,
                end: x.end.expect("filtered"),
                work_from: x.work_from,
                speed: x.speed,
                busy_end: x.busy_end.expect("set with end"),
            })
            .collect();
        let tenants: Vec<String> = self
            .sc
            .jobs
            .iter()
            .map(|j| j.tenant_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let job_tenant: Vec<usize> = self
            .sc
            .jobs
            .iter()
            .map(|j| tenants.binary_search(&j.tenant_id).expect("collected"))
            .collect();
        let per_job = self
            .sc
            .jobs
            .iter()
            .zip(&self.jobs)
            .map(|(spec, st)| {
                let completed = st.terminal == Some(Terminal::Completed);
                let finish = if completed { st.finish } else { None };
                JobOutcome {
                    job_id: spec.job_id.clone(),
                    tenant_id: spec.tenant_id.clone(),
                    status: match st.terminal {
                        Some(Terminal::Completed) => "completed",
                        Some(Terminal::Rejected) => "rejected",
                        None => "unfinished",
                    }
                    .to_string(),
                    arrival: spec.arrival,
                    first_start: st.first_start,
                    finish,
                    queueing_delay: st.first_start.map(|t| t - spec.arrival),
                    reexecuted_work: st.reexecuted,
                    executions: st.executions,
                    deadline: spec.deadline,
                    deadline_met: spec.deadline.and_then(|d| finish.map(|f| f <= d + 1e-9)),
                    deadline_admitted: st.first_grant_ok.flatten(),
                    slowdown: finish.map(|f| (f - spec.arrival) / spec.total_work),
                }
            })
            .collect();
        let metrics = compute(MetricsInput {
            scheduler: self.kind.to_string(),
            seed: self.seed,
            grid_step: self.g,
            total_capacity: self.cluster.total_capacity(),
            horizon: self.cfg.metrics_horizon,
            makespan,
            execs: &execs,
            actual: &self.actual,
            tenants: &tenants,
            job_tenant: &job_tenant,
            idle_spans: &self.idle_spans,
            interruptions: self.interruptions,
            oom_kills: self.oom_kills,
            injected_failures: self.injected,
            admission_checks: self.admission_checks,
            per_job,
        });
        (metrics, self.log)
    }
}
