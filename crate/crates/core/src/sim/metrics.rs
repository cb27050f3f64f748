//! Metric accumulation from execution records.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::policies::jain_index;
use crate::stats::{mean, Summary};
use crate::trajectory::Trajectory;
use crate::{Megabytes, Seconds};

/// One occupancy of a slice: an SJA subjob or a monolithic placement.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ExecRecord {
    pub job: usize,
    pub capacity: Megabytes,
    pub start: Seconds,
    /// End of the slice occupancy.
    pub end: Seconds,
    /// Work position at `start`.
    pub work_from: Seconds,
    /// Work seconds advanced per wall second.
    pub speed: f64,
    /// Seconds actually spent executing work (excludes padding).
    pub busy_end: Seconds,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobOutcome {
    pub job_id: String,
    pub tenant_id: String,
    pub status: String,
    pub arrival: Seconds,
    pub first_start: Option<Seconds>,
    pub finish: Option<Seconds>,
    pub queueing_delay: Option<Seconds>,
    pub reexecuted_work: Seconds,
    pub executions: usize,
    pub deadline: Option<Seconds>,
    pub deadline_met: Option<bool>,
    /// Deadline admissibility as judged at the job's first grant.
    pub deadline_admitted: Option<bool>,
    /// Time in system over reference work, for completed jobs.
    pub slowdown: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub scheduler: String,
    pub seed: u64,
    pub horizon: Seconds,
    pub makespan: Seconds,
    pub jobs: usize,
    pub completed: usize,
    pub rejected: usize,
    pub reserved_utilization: f64,
    pub used_utilization: f64,
    pub queueing_delay: Summary,
    pub rejection_rate: f64,
    pub interruptions: u64,
    pub started_executions: u64,
    pub oom_kills: u64,
    pub injected_failures: u64,
    /// OOM kills per started execution; undefined with no executions.
    pub oom_violation_rate: Option<f64>,
    pub fragmentation_loss: f64,
    pub jain: f64,
    pub reexecuted_work: Seconds,
    pub slowdown_mean: Option<f64>,
    pub slowdown_max: Option<f64>,
    /// Share of SJA subjobs on which envelope admission would have judged
    /// differently from joint admission at the assigned capacity; undefined
    /// without subjobs.
    pub admission_disagreement: Option<f64>,
    /// Reserved capacity-time (MB·s) per tenant within the horizon.
    pub tenant_service: BTreeMap<String, f64>,
    pub per_job: Vec<JobOutcome>,
}

pub(crate) struct MetricsInput<'a> {
    pub scheduler: String,
    pub seed: u64,
    pub grid_step: Seconds,
    pub total_capacity: Megabytes,
    pub horizon: Option<Seconds>,
    pub makespan: Seconds,
    pub execs: &'a [ExecRecord],
    pub actual: &'a [Trajectory],
    pub tenants: &'a [String],
    /// Tenant of each job.
    pub job_tenant: &'a [usize],
    /// `(from, to, idle capacity)` spans during which some job was queued.
    pub idle_spans: &'a [(Seconds, Seconds, Megabytes)],
    pub interruptions: u64,
    pub oom_kills: u64,
    pub injected_failures: u64,
    /// `(checked, disagreed)` subjob admissions.
    pub admission_checks: (u64, u64),
    pub per_job: Vec<JobOutcome>,
}

fn overlap(a0: f64, a1: f64, b0: f64, b1: f64) -> f64 {
    (a1.min(b1) - a0.max(b0)).max(0.0)
}

/// Memory-time of an execution over `[0, horizon]`: the actual trajectory
/// read at the work position, step-hold per grid cell.
fn used_memory_time(e: &ExecRecord, traj: &Trajectory, g: Seconds, horizon: Seconds) -> f64 {
    let t0 = e.start.max(0.0);
    let t1 = e.busy_end.min(horizon);
    if t1 <= t0 {
        return 0.0;
    }
    let w0 = e.work_from + (t0 - e.start) * e.speed;
    let w1 = e.work_from + (t1 - e.start) * e.speed;
    let s = traj.samples();
    let last = s.last().copied().unwrap_or(0.0);
    let c0 = (w0 / g + 1e-9).floor() as usize;
    let c1 = (w1 / g - 1e-9).ceil().max(0.0) as usize;
    let mut acc = 0.0;
    for c in c0..c1.max(c0) {
        let len = overlap(c as f64 * g, (c + 1) as f64 * g, w0, w1);
        acc += s.get(c).copied().unwrap_or(last) * len / e.speed;
    }
    acc
}

pub(crate) fn compute(input: MetricsInput<'_>) -> MetricsReport {
    let h = input.horizon.unwrap_or(input.makespan);
    let denom = input.total_capacity * h;
    let mut reserved = 0.0;
    let mut used = 0.0;
    let mut tenant_service: BTreeMap<String, f64> =
        input.tenants.iter().map(|t| (t.clone(), 0.0)).collect();
    for e in input.execs {
        let r = overlap(e.start, e.end, 0.0, h) * e.capacity;
        reserved += r;
        *tenant_service
            .get_mut(&input.tenants[input.job_tenant[e.job]])
            .expect("tenant listed") += r;
        used += used_memory_time(e, &input.actual[e.job], input.grid_step, h);
    }
    let idle: f64 = input
        .idle_spans
        .iter()
        .map(|(a, b, cap)| overlap(*a, *b, 0.0, h) * cap)
        .sum();
    // `+ 0.0` turns a -0 from empty sums into 0
    let frac = |x: f64| {
        if denom > 0.0 {
            (x / denom).clamp(0.0, 1.0) + 0.0
        } else {
            0.0
        }
    };

    let delays: Vec<f64> = input
        .per_job
        .iter()
        .filter_map(|j| j.queueing_delay)
        .collect();
    let jobs = input.per_job.len();
    let completed = input
        .per_job
        .iter()
        .filter(|j| j.status == "completed")
        .count();
    let rejected = input
        .per_job
        .iter()
        .filter(|j| j.status == "rejected")
        .count();
    let started = input.execs.len() as u64;
    let service: Vec<f64> = tenant_service.values().copied().collect();
    let slowdowns: Vec<f64> = input.per_job.iter().filter_map(|j| j.slowdown).collect();
    let (checked, disagreed) = input.admission_checks;
    MetricsReport {
        scheduler: input.scheduler,
        seed: input.seed,
        horizon: h,
        makespan: input.makespan,
        jobs,
        completed,
        rejected,
        reserved_utilization: frac(reserved),
        used_utilization: frac(used),
        queueing_delay: Summary::of(&delays),
        rejection_rate: if jobs > 0 {
            rejected as f64 / jobs as f64
        } else {
            0.0
        },
        interruptions: input.interruptions,
        started_executions: started,
        oom_kills: input.oom_kills,
        injected_failures: input.injected_failures,
        oom_violation_rate: (started > 0).then(|| input.oom_kills as f64 / started as f64),
        fragmentation_loss: frac(idle),
        jain: if service.is_empty() {
            1.0
        } else {
            jain_index(&service).unwrap_or(1.0)
        },
        reexecuted_work: input.per_job.iter().map(|j| j.reexecuted_work).sum(),
        slowdown_mean: (!slowdowns.is_empty()).then(|| mean(&slowdowns)),
        slowdown_max: slowdowns.iter().copied().reduce(f64::max),
        admission_disagreement: (checked > 0).then(|| disagreed as f64 / checked as f64),
        tenant_service,
        per_job: input.per_job,
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

impl MetricsReport {
    /// Scalar metrics in a fixed order; `None` where undefined.
    pub fn scalars(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("reserved_utilization", Some(self.reserved_utilization)),
            ("used_utilization", Some(self.used_utilization)),
            ("queueing_delay_mean", Some(self.queueing_delay.mean)),
            ("queueing_delay_p50", Some(self.queueing_delay.p50)),
            ("queueing_delay_p95", Some(self.queueing_delay.p95)),
            ("queueing_delay_max", Some(self.queueing_delay.max)),
            ("rejection_rate", Some(self.rejection_rate)),
            ("interruptions", Some(self.interruptions as f64)),
            ("oom_violation_rate", self.oom_violation_rate),
            ("fragmentation_loss", Some(self.fragmentation_loss)),
            ("jain", Some(self.jain)),
            ("reexecuted_work", Some(self.reexecuted_work)),
            ("slowdown_mean", self.slowdown_mean),
            ("slowdown_max", self.slowdown_max),
            ("admission_disagreement", self.admission_disagreement),
            ("started_executions", Some(self.started_executions as f64)),
            ("oom_kills", Some(self.oom_kills as f64)),
            ("injected_failures", Some(self.injected_failures as f64)),
            ("completed", Some(self.completed as f64)),
            ("rejected", Some(self.rejected as f64)),
            ("makespan", Some(self.makespan)),
            ("horizon", Some(self.horizon)),
        ]
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.scalars() {
            let _ = writeln!(out, "{k},{}", opt(v));
        }
        for (t, s) in &self.tenant_service {
            let _ = writeln!(out, "tenant_service.{t},{s}");
        }
        out
    }

    pub fn per_job_csv(&self) -> String {
        let mut out = String::from(
            "job_id,tenant,status,arrival,first_start,finish,queueing_delay,reexecuted_work,executions,deadline,deadline_met,deadline_admitted,slowdown\n",
        );
        let b = |x: Option<bool>| x.map_or("NA".to_string(), |v| v.to_string());
        for j in &self.per_job {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                j.job_id,
                j.tenant_id,
                j.status,
                j.arrival,
                opt(j.first_start),
                opt(j.finish),
                opt(j.queueing_delay),
                j.reexecuted_work,
                j.executions,
                opt(j.deadline),
                b(j.deadline_met),
                b(j.deadline_admitted),
                opt(j.slowdown),
            );
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scheduler {} seed {}", self.scheduler, self.seed);
        let _ = writeln!(
            s,
            "  jobs {} completed {} rejected {} (rate {:.3})",
            self.jobs, self.completed, self.rejected, self.rejection_rate
        );
        let _ = writeln!(
            s,
            "  makespan {:.1} s, metrics horizon {:.1} s",
            self.makespan, self.horizon
        );
        let _ = writeln!(
            s,
            "  utilization reserved {:.4} used {:.4}, fragmentation loss {:.4}",
            self.reserved_utilization, self.used_utilization, self.fragmentation_loss
        );
        let q = &self.queueing_delay;
        let _ = writeln!(
            s,
            "  queueing delay mean {:.1} p50 {:.1} p95 {:.1} max {:.1} s",
            q.mean, q.p50, q.p95, q.max
        );
        let _ = writeln!(
            s,
            "  executions {} oom kills {} ({}) injected failures {} interruptions {}",
            self.started_executions,
            self.oom_kills,
            self.oom_violation_rate
                .map_or("n/a".to_string(), |r| format!("{r:.4}")),
            self.injected_failures,
            self.interruptions
        );
        let _ = writeln!(
            s,
            "  re-executed work {:.1} s, jain {:.4}",
            self.reexecuted_work, self.jain
        );
        let f = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        let _ = writeln!(
            s,
            "  slowdown mean {} max {}, joint/envelope admission disagreement {}",
            f(self.slowdown_mean),
            f(self.slowdown_max),
            f(self.admission_disagreement)
        );
        s
    }
}
