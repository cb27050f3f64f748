//! Offer-driven job atomization on MIG-partitioned GPU clusters.
//!
//! The crate is a deterministic, trace-driven discrete-event simulator. Jobs
//! carry functional memory profiles built from ensembles of historical runs;
//! the scheduler advertises execution gaps on slices, jobs answer with
//! interest or decline, a grant policy picks one job per gap, and only the
//! granted job materializes checkpoint-bounded subjobs. Conventional
//! monolithic, moldable and preempt/migrate schedulers run on the same
//! engine for comparison.
//!
//! Module map:
//!
//! * [`profiles`]: quantile envelopes, joint and deadline admissibility,
//!   continuation prediction.
//! * [`workload`]: jobs, subjobs, checkpoints, trajectory synthesis,
//!   scenario ingest and subjob planning.
//! * [`cluster`]: slices, reservation timelines, gap discovery.
//! * [`protocol`]: offers, interest, grants, segmentation, scheduling rounds.
//! * [`policies`]: grant policies and Jain's fairness index.
//! * [`baselines`]: first-fit, best-fit, moldable and preempt/migrate.
//! * [`sim`]: the event engine, metrics and multi-seed comparison.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cluster;
pub mod config;
pub mod error;
pub mod eventlog;
pub mod policies;
pub mod profiles;
pub mod protocol;
pub mod rng;
pub mod scenarios;
pub mod sim;
pub mod stats;
pub mod trajectory;
pub mod workload;

pub use cluster::{ClusterState, ExecutionWindow, SliceCatalog, SliceId};
pub use config::{SchedulerKind, SimConfig};
pub use error::{Error, Result};
pub use eventlog::{EventLog, LogRecord};
pub use policies::{GrantPolicy, TenantLedger};
pub use profiles::{FunctionalProfile, RiskParams, TrajectoryEnsemble};
pub use protocol::SegmentationConfig;
pub use sim::{compare, run, CompareTable, MetricsReport, RunOutput};
pub use trajectory::Trajectory;
pub use workload::{Checkpoint, JobId, JobSpec, PhaseModel, Scenario, SubJob, TenantId};

/// Simulated time and durations, in seconds.
pub type Seconds = f64;
/// Memory quantities, in megabytes.
pub type Megabytes = f64;
