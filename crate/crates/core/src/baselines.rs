//! Conventional schedulers on the same cluster model: monolithic
//! first-fit/best-fit, moldable, and priority preemption with migration.
//!
//! These are pure decision functions; the engine applies their placements.
//! A monolithic placement holds its slice from `now` until completion, so a
//! slice is eligible only when nothing is reserved on it from `now` on.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::cluster::{ClusterState, SliceId};
use crate::error::{Error, Result};
use crate::{Megabytes, Seconds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    FirstFit,
    BestFit,
    Moldable,
    PreemptMigrate,
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BaselineKind::FirstFit => "first_fit",
            BaselineKind::BestFit => "best_fit",
            BaselineKind::Moldable => "moldable",
            BaselineKind::PreemptMigrate => "preempt_migrate",
        })
    }
}

/// Per-capacity runtime multipliers for the moldable baseline.
#[derive(Clone, Debug, PartialEq, Default, Serialize)]
pub struct SpeedupTable {
    entries: Vec<(Megabytes, f64)>,
}

impl SpeedupTable {
    pub fn new(mut entries: Vec<(Megabytes, f64)>) -> Result<Self> {
        if entries.iter().any(|(_, m)| !(*m > 0.0) || !m.is_finite()) {
            return Err(Error::Config("speedup multipliers must be > 0".into()));
        }
        entries.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(SpeedupTable { entries })
    }

    /// Runtime multiplier for a capacity; 1.0 when not listed.
    pub fn multiplier(&self, capacity: Megabytes) -> f64 {
        self.entries
            .iter()
            .find(|(c, _)| *c == capacity)
            .map_or(1.0, |(_, m)| *m)
    }

    pub fn entries(&self) -> &[(Megabytes, f64)] {
        &self.entries
    }
}

impl FromStr for SpeedupTable {
    type Err = Error;

    /// `capacity:multiplier` pairs separated by commas; empty means all 1.0.
    fn from_str(s: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (c, m) = part.split_once(':').ok_or_else(|| {
                Error::Config(format!("speedup entry `{part}` is not capacity:multiplier"))
            })?;
            let c: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad capacity `{c}`")))?;
            let m: f64 = m
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad multiplier `{m}`")))?;
            entries.push((c, m));
        }
        SpeedupTable::new(entries)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MigrationParams {
    /// MB/s.
    pub bandwidth: f64,
    pub fixed_overhead: Seconds,
    /// Work seconds between periodic checkpoints.
    pub ckpt_interval: Seconds,
}

impl Default for MigrationParams {
    fn default() -> Self {
        MigrationParams {
            bandwidth: 1024.0,
            fixed_overhead: 5.0,
            ckpt_interval: 600.0,
        }
    }
}

impl MigrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth > 0.0) {
            return Err(Error::Config("migrate_bandwidth must be > 0".into()));
        }
        if !(self.fixed_overhead >= 0.0) {
            return Err(Error::Config("migrate_fixed_overhead must be >= 0".into()));
        }
        if !(self.ckpt_interval > 0.0) {
            return Err(Error::Config("ckpt_interval must be > 0".into()));
        }
        Ok(())
    }
}

/// Time to move live state to another slice.
pub fn transfer_delay(live_state: Megabytes, params: &MigrationParams) -> Seconds {
    live_state / params.bandwidth + params.fixed_overhead
}

/// Latest periodic checkpoint at or before `progress`, never before the
/// point the execution resumed from. Both in work seconds.
pub fn checkpoint_floor(progress: Seconds, resumed_from: Seconds, interval: Seconds) -> Seconds {
    let k = ((progress + 1e-9) / interval).floor();
    (k * interval).max(resumed_from).min(progress)
}

/// A job waiting for a monolithic placement.
#[derive(Clone, Debug, PartialEq)]
pub struct QueuedJob {
    pub job: usize,
    pub job_id: String,
    pub demand: Megabytes,
    pub priority: u32,
    pub arrival: Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunningJob {
    pub job: usize,
    pub slice: SliceId,
    pub priority: u32,
    pub start: Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Placement {
    pub job: usize,
    pub slice: SliceId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum PreemptAction {
    Place(Placement),
    Preempt {
        victim: usize,
        slice: SliceId,
        for_job: usize,
    },
}

fn fifo(a: &QueuedJob, b: &QueuedJob) -> Ordering {
    a.arrival
        .total_cmp(&b.arrival)
        .then_with(|| a.job_id.cmp(&b.job_id))
}

fn free_slices(cluster: &ClusterState, now: Seconds) -> Vec<(SliceId, Megabytes)> {
    cluster
        .slices()
        .iter()
        .filter(|s| cluster.is_free_from(s.slice_id, now))
        .map(|s| (s.slice_id, s.capacity))
        .collect()
}

fn best_fit(
    free: &[(SliceId, Megabytes)],
    used: &BTreeSet<SliceId>,
    demand: Megabytes,
) -> Option<SliceId> {
    free.iter()
        .filter(|(id, c)| *c >= demand && !used.contains(id))
        .min_by(|a, b| {
            (a.1 - demand)
                .total_cmp(&(b.1 - demand))
                .then(a.0.cmp(&b.0))
        })
        .map(|(id, _)| *id)
}

/// First-fit or best-fit over the FIFO queue with backfilling: jobs that do
/// not fit are skipped, later jobs may still be placed.
pub fn monolithic_place(
    queue: &[QueuedJob],
    cluster: &ClusterState,
    now: Seconds,
    kind: BaselineKind,
) -> Vec<Placement> {
    let free = free_slices(cluster, now);
    let mut used = BTreeSet::new();
    let mut order: Vec<&QueuedJob> = queue.iter().collect();
    order.sort_by(|a, b| fifo(a, b));
    let mut out = Vec::new();
    for q in order {
        let pick = match kind {
            BaselineKind::BestFit => best_fit(&free, &used, q.demand),
            _ => free
                .iter()
                .find(|(id, c)| *c >= q.demand && !used.contains(id))
                .map(|(id, _)| *id),
        };
        if let Some(slice) = pick {
            used.insert(slice);
            out.push(Placement { job: q.job, slice });
        }
    }
    out
}

/// The capacity a moldable job is fixed to: the smallest slice capacity in
/// the cluster covering its declared peak.
pub fn moldable_shape(demand: Megabytes, cluster: &ClusterState) -> Option<Megabytes> {
    cluster
        .slices()
        .iter()
        .map(|s| s.capacity)
        .filter(|c| *c >= demand)
        .min_by(f64::total_cmp)
}

/// Places each queued job on a free slice of exactly its fixed shape.
pub fn moldable_place(queue: &[QueuedJob], cluster: &ClusterState, now: Seconds) -> Vec<Placement> {
    let free = free_slices(cluster, now);
    let mut used = BTreeSet::new();
    let mut order: Vec<&QueuedJob> = queue.iter().collect();
    order.sort_by(|a, b| fifo(a, b));
    let mut out = Vec::new();
    for q in order {
        let Some(shape) = moldable_shape(q.demand, cluster) else {
            continue;
        };
        if let Some((slice, _)) = free
            .iter()
            .find(|(id, c)| *c == shape && !used.contains(id))
        {
            used.insert(*slice);
            out.push(Placement {
                job: q.job,
                slice: *slice,
            });
        }
    }
    out
}

/// Priority scheduling with preemption. Waiting jobs are served in priority
/// order; when no free slice fits, the lowest-priority running job on a big
/// enough slice is preempted, provided its priority is strictly lower.
pub fn preempt_migrate_step(
    running: &[RunningJob],
    queue: &[QueuedJob],
    cluster: &ClusterState,
    now: Seconds,
) -> Vec<PreemptAction> {
    let free = free_slices(cluster, now);
    let mut used = BTreeSet::new();
    let mut victims = BTreeSet::new();
    let mut order: Vec<&QueuedJob> = queue.iter().collect();
    order.sort_by(|a, b| b.priority.cmp(&a.priority).then_with(|| fifo(a, b)));
    let mut out = Vec::new();
    for q in order {
        if let Some(slice) = best_fit(&free, &used, q.demand) {
            used.insert(slice);
            out.push(PreemptAction::Place(Placement { job: q.job, slice }));
            continue;
        }
        let victim = running
            .iter()
            .filter(|r| {
                r.priority < q.priority
                    && !victims.contains(&r.job)
                    && !used.contains(&r.slice)
                    && cluster.slice(r.slice).capacity >= q.demand
            })
            .min_by(|a, b| {
                a.priority
                    .cmp(&b.priority)
                    .then(b.start.total_cmp(&a.start))
                    .then(a.slice.cmp(&b.slice))
            });
        if let Some(v) = victim {
            victims.insert(v.job);
            used.insert(v.slice);
            out.push(PreemptAction::Preempt {
                victim: v.job,
                slice: v.slice,
                for_job: q.job,
            });
            out.push(PreemptAction::Place(Placement {
                job: q.job,
                slice: v.slice,
            }));
        }
    }
    out
}
