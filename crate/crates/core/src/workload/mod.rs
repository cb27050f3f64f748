//! Jobs, subjobs and checkpoints, plus everything that produces them:
//! trajectory synthesis, scenario ingest and subjob planning.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;

use crate::cluster::SliceId;
use crate::error::{Error, Result};
use crate::profiles::TrajectoryEnsemble;
use crate::rng;
use crate::trajectory::{cells_in, Trajectory};
use crate::{Megabytes, Seconds};

mod generator;
mod ingest;
mod plan;

pub use generator::{generate_trajectory, sample_duration, synth_ensemble};
pub use ingest::{ingest_scenario, load_manifest, write_scenario};
pub use plan::{
    plan_extent, plan_segments, Decline, ExtentCache, JobPlanState, PlanExtent, PlanParams,
    PlannedFragment,
};

pub type JobId = String;
pub type TenantId = String;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseKind {
    Warmup,
    Steady,
    Burst,
}

impl PhaseKind {
    pub fn parse(s: &str) -> Option<PhaseKind> {
        match s {
            "warmup" => Some(PhaseKind::Warmup),
            "steady" => Some(PhaseKind::Steady),
            "burst" => Some(PhaseKind::Burst),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            PhaseKind::Warmup => "warmup",
            PhaseKind::Steady => "steady",
            PhaseKind::Burst => "burst",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Phase {
    pub kind: PhaseKind,
    pub duration: Seconds,
    pub base_mb: Megabytes,
    pub noise_sd: Megabytes,
    pub burst_amp: Megabytes,
    /// Burst probability per grid step.
    pub burst_prob: f64,
}

impl Phase {
    pub fn steady(duration: Seconds, base_mb: Megabytes, noise_sd: Megabytes) -> Phase {
        Phase {
            kind: PhaseKind::Steady,
            duration,
            base_mb,
            noise_sd,
            burst_amp: 0.0,
            burst_prob: 0.0,
        }
    }

    pub fn warmup(duration: Seconds, base_mb: Megabytes, noise_sd: Megabytes) -> Phase {
        Phase {
            kind: PhaseKind::Warmup,
            ..Phase::steady(duration, base_mb, noise_sd)
        }
    }

    pub fn burst(
        duration: Seconds,
        base_mb: Megabytes,
        noise_sd: Megabytes,
        amp: Megabytes,
        prob: f64,
    ) -> Phase {
        Phase {
            kind: PhaseKind::Burst,
            burst_amp: amp,
            burst_prob: prob,
            ..Phase::steady(duration, base_mb, noise_sd)
        }
    }
}

/// Phase structure of a job's memory demand.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseModel {
    pub phases: Vec<Phase>,
}

impl PhaseModel {
    pub fn new(phases: Vec<Phase>) -> Result<Self> {
        let m = PhaseModel { phases };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::invalid("phase model has no phases"));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if !(p.duration > 0.0) {
                return Err(Error::invalid(format!("phase {i}: duration must be > 0")));
            }
            if !(p.base_mb >= 0.0) || !(p.noise_sd >= 0.0) || !(p.burst_amp >= 0.0) {
                return Err(Error::invalid(format!(
                    "phase {i}: memory parameters must be >= 0"
                )));
            }
            if !(0.0..=1.0).contains(&p.burst_prob) {
                return Err(Error::invalid(format!(
                    "phase {i}: burst probability must lie in [0, 1]"
                )));
            }
        }
        Ok(())
    }

    pub fn nominal_duration(&self) -> Seconds {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// Length of a leading warmup phase, zero when the model starts otherwise.
    pub fn warmup_duration(&self) -> Seconds {
        match self.phases.first() {
            Some(p) if p.kind == PhaseKind::Warmup => p.duration,
            _ => 0.0,
        }
    }
}

/// The distribution a job's runs are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub model: PhaseModel,
    pub duration_jitter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct JobSpec {
    pub job_id: JobId,
    pub tenant_id: TenantId,
    pub arrival: Seconds,
    /// Seconds of reference execution.
    pub total_work: Seconds,
    pub declared_peak: Megabytes,
    /// Key of the job's ensemble in the owning [`Scenario`].
    pub ensemble: String,
    pub deadline: Option<Seconds>,
    pub priority: u32,
    pub checkpoint_size: Megabytes,
    pub atomizable: bool,
}

impl JobSpec {
    pub fn validate(&self) -> Result<()> {
        if self.job_id.is_empty() {
            return Err(Error::invalid("empty job id"));
        }
        if !(self.arrival >= 0.0) || !self.arrival.is_finite() {
            return Err(Error::invalid(format!(
                "job {}: negative or non-finite arrival time {}",
                self.job_id, self.arrival
            )));
        }
        if !(self.total_work > 0.0) || !self.total_work.is_finite() {
            return Err(Error::invalid(format!(
                "job {}: total_work must be > 0",
                self.job_id
            )));
        }
        if !(self.declared_peak > 0.0) {
            return Err(Error::invalid(format!(
                "job {}: declared_peak must be > 0",
                self.job_id
            )));
        }
        if !(self.checkpoint_size >= 0.0) {
            return Err(Error::invalid(format!(
                "job {}: checkpoint_size must be >= 0",
                self.job_id
            )));
        }
        if let Some(d) = self.deadline {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::invalid(format!(
                    "job {}: negative deadline {d}",
                    self.job_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Checkpoint {
    pub parent: JobId,
    pub completed_fraction: f64,
    pub size: Megabytes,
    pub created_at: Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SubJobId(pub u64);

impl fmt::Display for SubJobId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubJobStatus {
    Planned,
    Running,
    Completed,
    FailedOom,
    FailedInjected,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SubJob {
    pub subjob_id: SubJobId,
    pub parent: JobId,
    #[serde(skip)]
    pub parent_index: usize,
    pub offer_id: u64,
    pub slice_id: SliceId,
    pub start: Seconds,
    /// Reserved wall-clock duration. The last fragment of a job may be
    /// padded up to the minimum duration; its tail is released on completion.
    pub duration: Seconds,
    /// Physical capacity of the slice the subjob runs on.
    pub slice_capacity: Megabytes,
    /// Smallest catalog capacity covering the fragment's smoothed envelope.
    pub assigned_capacity: Megabytes,
    /// Job-relative work interval, in seconds of reference execution.
    pub work_from: Seconds,
    pub work_to: Seconds,
    /// Work segment as fractions of the parent's total work.
    pub work_segment: (f64, f64),
    pub resume_from: Option<Checkpoint>,
    pub predicted_peak: Megabytes,
    pub status: SubJobStatus,
}

impl SubJob {
    pub fn end(&self) -> Seconds {
        self.start + self.duration
    }
}

/// A loaded ensemble and, when known, the generator behind it.
#[derive(Clone, Debug)]
pub struct EnsembleSource {
    pub ensemble: Arc<TrajectoryEnsemble>,
    pub generator: Option<Generator>,
}

/// A fully linked workload.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub jobs: Vec<JobSpec>,
    pub ensembles: BTreeMap<String, EnsembleSource>,
    /// Explicit actual runs that override the ensemble draw.
    pub ground_truth: BTreeMap<JobId, Trajectory>,
    grid_step: Seconds,
}

impl Scenario {
    pub fn new(
        jobs: Vec<JobSpec>,
        ensembles: BTreeMap<String, EnsembleSource>,
        ground_truth: BTreeMap<JobId, Trajectory>,
    ) -> Result<Self> {
        let grid_step = match ensembles.values().next() {
            Some(e) => e.ensemble.grid_step(),
            None if jobs.is_empty() => 1.0,
            None => return Err(Error::Link("scenario has jobs but no ensembles".into())),
        };
        for (key, e) in &ensembles {
            if (e.ensemble.grid_step() - grid_step).abs() > 1e-9 * grid_step {
                return Err(Error::invalid(format!(
                    "ensemble {key} uses grid step {} but the scenario uses {grid_step}",
                    e.ensemble.grid_step()
                )));
            }
            if e.ensemble.is_empty() {
                return Err(Error::invalid(format!("ensemble {key} has no runs")));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut jobs = jobs;
        for job in &mut jobs {
            job.validate()?;
            if !seen.insert(job.job_id.clone()) {
                return Err(Error::invalid(format!("duplicate job id {}", job.job_id)));
            }
            if !ensembles.contains_key(&job.ensemble) {
                return Err(Error::Link(format!(
                    "job {} references unknown ensemble {}",
                    job.job_id, job.ensemble
                )));
            }
            // work is measured in whole grid cells
            let cells = cells_in(job.total_work, grid_step).max(1);
            job.total_work = cells as f64 * grid_step;
        }
        for (id, t) in &ground_truth {
            if !seen.contains(id) {
                return Err(Error::Link(format!("ground truth for unknown job {id}")));
            }
            if (t.grid_step() - grid_step).abs() > 1e-9 * grid_step {
                return Err(Error::invalid(format!(
                    "ground truth for {id} is off the scenario grid"
                )));
            }
        }
        Ok(Scenario {
            jobs,
            ensembles,
            ground_truth,
            grid_step,
        })
    }

    pub fn empty() -> Scenario {
        Scenario {
            jobs: Vec::new(),
            ensembles: BTreeMap::new(),
            ground_truth: BTreeMap::new(),
            grid_step: 1.0,
        }
    }

    pub fn grid_step(&self) -> Seconds {
        self.grid_step
    }

    pub fn ensemble_of(&self, job: &JobSpec) -> &EnsembleSource {
        &self.ensembles[&job.ensemble]
    }

    /// Keeps only the first `n` historical runs of every ensemble.
    pub fn with_historical_runs(&self, n: usize) -> Result<Scenario> {
        if n == 0 {
            return Err(Error::invalid("n_historical_runs must be >= 1"));
        }
        let mut out = self.clone();
        for e in out.ensembles.values_mut() {
            e.ensemble = Arc::new(e.ensemble.truncated(n));
        }
        Ok(out)
    }

    /// The job's actual memory trajectory for this seed: `total_work / g + 1`
    /// samples. Explicit ground truth wins; otherwise a fresh generator draw,
    /// or a bootstrap of one ensemble run when no generator is known.
    pub fn actual_trajectory(&self, job_index: usize, seed: u64) -> Result<Trajectory> {
        let job = &self.jobs[job_index];
        let g = self.grid_step;
        let cells = cells_in(job.total_work, g);
        if let Some(t) = self.ground_truth.get(&job.job_id) {
            return Ok(t.fit_len(cells + 1));
        }
        let src = self.ensemble_of(job);
        let s = rng::sub_seed(seed, rng::label_hash(&format!("actual:{}", job.job_id)));
        match &src.generator {
            Some(gen) => generate_trajectory(&gen.model, cells as f64 * g, g, s),
            None => {
                let mut r = rng::stream(s, 0);
                let pick = r.random_range(0..src.ensemble.len());
                Ok(src.ensemble.trajectory(pick).fit_len(cells + 1))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(id: &str) -> JobSpec {
        JobSpec {
            job_id: id.into(),
            tenant_id: "t".into(),
            arrival: 0.0,
            total_work: 10.4,
            declared_peak: 100.0,
            ensemble: "e".into(),
            deadline: None,
            priority: 0,
            checkpoint_size: 0.0,
            atomizable: true,
        }
    }

    fn ensembles(g: f64) -> BTreeMap<String, EnsembleSource> {
        let ens = TrajectoryEnsemble::new(g, vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0]]).unwrap();
        BTreeMap::from([(
            "e".to_string(),
            EnsembleSource {
                ensemble: Arc::new(ens),
                generator: None,
            },
        )])
    }

    #[test]
    fn phase_model_validation() {
        assert!(PhaseModel::new(vec![]).is_err());
        assert!(PhaseModel::new(vec![Phase::steady(0.0, 1.0, 0.0)]).is_err());
        assert!(PhaseModel::new(vec![Phase::burst(1.0, 1.0, 0.0, 1.0, 1.5)]).is_err());
        let m = PhaseModel::new(vec![
            Phase::warmup(5.0, 1.0, 0.0),
            Phase::steady(10.0, 1.0, 0.0),
        ])
        .unwrap();
        assert_eq!(m.nominal_duration(), 15.0);
        assert_eq!(m.warmup_duration(), 5.0);
    }

    #[test]
    fn job_validation() {
        let mut j = spec("a");
        j.arrival = -5.0;
        assert!(j.validate().unwrap_err().to_string().contains("negative"));
        let mut j = spec("a");
        j.total_work = 0.0;
        assert!(j.validate().is_err());
        let mut j = spec("a");
        j.checkpoint_size = -1.0;
        assert!(j.validate().is_err());
    }

    #[test]
    fn scenario_snaps_work_and_checks_links() {
        let s = Scenario::new(vec![spec("a")], ensembles(1.0), BTreeMap::new()).unwrap();
        assert_eq!(s.jobs[0].total_work, 10.0);
        let mut bad = spec("b");
        bad.ensemble = "nope".into();
        assert!(matches!(
            Scenario::new(vec![bad], ensembles(1.0), BTreeMap::new()),
            Err(Error::Link(_))
        ));
        assert!(
            Scenario::new(vec![spec("a"), spec("a")], ensembles(1.0), BTreeMap::new()).is_err()
        );
    }

    #[test]
    fn bootstrap_actual_has_exact_length_and_is_seeded() {
        let s = Scenario::new(vec![spec("a")], ensembles(1.0), BTreeMap::new()).unwrap();
        let a = s.actual_trajectory(0, 3).unwrap();
        assert_eq!(a.len(), 11);
        assert_eq!(a, s.actual_trajectory(0, 3).unwrap());
    }

    #[test]
    fn ground_truth_overrides_the_draw() {
        let gt = Trajectory::new(1.0, vec![7.0; 11]).unwrap();
        let s = Scenario::new(
            vec![spec("a")],
            ensembles(1.0),
            BTreeMap::from([("a".to_string(), gt.clone())]),
        )
        .unwrap();
        assert_eq!(s.actual_trajectory(0, 99).unwrap(), gt);
    }
}
