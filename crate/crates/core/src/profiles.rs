//! Functional memory profiles.
//!
//! A profile summarizes an ensemble of historical runs of the same job:
//! pointwise nearest-rank quantile curves (median, risk-adjusted upper
//! envelopes), the runtime samples, and the ensemble itself for joint
//! (whole-window) probability queries.
//!
//! Runs of unequal length are aligned at job start. At grid point `t` only
//! runs still alive at `t` contribute, and the number of contributing runs is
//! kept as the per-point support.

use std::borrow::Cow;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::stats::{nearest_rank, quantile_sorted, required_count};
use crate::trajectory::{CellRange, TimeWindow, Trajectory};
use crate::{Megabytes, Seconds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ResourceKind {
    #[default]
    Memory,
}

/// Historical runs of one job class on a shared uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryEnsemble {
    resource_kind: ResourceKind,
    grid_step: Seconds,
    runs: Vec<Vec<Megabytes>>,
}

impl TrajectoryEnsemble {
    pub fn new(grid_step: Seconds, runs: Vec<Vec<Megabytes>>) -> Result<Self> {
        if !(grid_step > 0.0) {
            return Err(Error::invalid(format!(
                "grid step must be > 0, got {grid_step}"
            )));
        }
        for (i, run) in runs.iter().enumerate() {
            if run.is_empty() {
                return Err(Error::invalid(format!("run {i} is empty")));
            }
            if run.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
                return Err(Error::invalid(format!(
                    "run {i} has a negative or non-finite sample"
                )));
            }
        }
        Ok(TrajectoryEnsemble {
            resource_kind: ResourceKind::Memory,
            grid_step,
            runs,
        })
    }

    pub fn from_trajectories(trajs: &[Trajectory]) -> Result<Self> {
        let Some(first) = trajs.first() else {
            return Err(Error::invalid("ensemble has no runs"));
        };
        let g = first.grid_step();
        if let Some(t) = trajs.iter().find(|t| (t.grid_step() - g).abs() > 1e-9 * g) {
            return Err(Error::invalid(format!(
                "mixed grid steps in ensemble: {} vs {}",
                g,
                t.grid_step()
            )));
        }
        TrajectoryEnsemble::new(g, trajs.iter().map(|t| t.samples().to_vec()).collect())
    }

    pub fn resource_kind(&self) -> ResourceKind {
        self.resource_kind
    }

    pub fn grid_step(&self) -> Seconds {
        self.grid_step
    }

    pub fn runs(&self) -> &[Vec<Megabytes>] {
        &self.runs
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn run_durations(&self) -> Vec<Seconds> {
        self.runs
            .iter()
            .map(|r| (r.len() - 1) as f64 * self.grid_step)
            .collect()
    }

    pub fn max_len(&self) -> usize {
        self.runs.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn trajectory(&self, i: usize) -> Trajectory {
        Trajectory::new(self.grid_step, self.runs[i].clone()).expect("validated run")
    }

    /// The first `n` runs (all of them if `n` exceeds the ensemble size).
    pub fn truncated(&self, n: usize) -> TrajectoryEnsemble {
        TrajectoryEnsemble {
            resource_kind: self.resource_kind,
            grid_step: self.grid_step,
            runs: self.runs.iter().take(n).cloned().collect(),
        }
    }

    fn with_run(&self, run: Vec<Megabytes>) -> TrajectoryEnsemble {
        let mut runs = self.runs.clone();
        runs.push(run);
        TrajectoryEnsemble {
            resource_kind: self.resource_kind,
            grid_step: self.grid_step,
            runs,
        }
    }
}

/// Memory risk tolerance `eps` and deadline risk tolerance `alpha_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RiskParams {
    pub eps: f64,
    pub alpha_t: f64,
}

impl RiskParams {
    pub fn new(eps: f64, alpha_t: f64) -> Result<Self> {
        check_probability("eps", eps)?;
        check_probability("alpha_t", alpha_t)?;
        Ok(RiskParams { eps, alpha_t })
    }
}

impl Default for RiskParams {
    fn default() -> Self {
        RiskParams {
            eps: 0.05,
            alpha_t: 0.05,
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "{name} must lie in (0, 1), got {p}"
        )))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdmissionMethod {
    /// Fraction of runs whose maximum over the window stays within capacity.
    Joint,
    /// Peak of the pointwise upper envelope over the window.
    Envelope,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    /// Estimated probability of staying within bounds.
    pub probability: f64,
    /// The query window extended past the profile horizon and was clamped.
    pub truncated: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvelopePeak {
    pub value: Megabytes,
    pub truncated: bool,
}

/// Median prediction of how a partially observed run continues.
#[derive(Clone, Debug, PartialEq)]
pub struct Continuation {
    pub median: Vec<Megabytes>,
    pub lower: Vec<Megabytes>,
    pub upper: Vec<Megabytes>,
    /// Indices of the neighbor runs, nearest first.
    pub neighbors: Vec<usize>,
}

/// Furthest feasible end cells for a planned interval starting at a given
/// cell. `usize::MAX` means unbounded within the known profile.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdmissibleExtent {
    pub envelope_end: usize,
    pub joint_end: usize,
}

impl AdmissibleExtent {
    pub fn end(&self) -> usize {
        self.envelope_end.min(self.joint_end)
    }
}

#[derive(Clone, Debug)]
pub struct FunctionalProfile {
    grid_step: Seconds,
    horizon: Seconds,
    median: Vec<Megabytes>,
    support: Vec<u32>,
    envelopes: Vec<(f64, Vec<Megabytes>)>,
    runtime_samples: Vec<Seconds>,
    source: Option<Arc<TrajectoryEnsemble>>,
}

/// Builds a profile with one cached envelope per requested risk level.
pub fn build_profile(
    ensemble: &TrajectoryEnsemble,
    eps_levels: &[f64],
) -> Result<FunctionalProfile> {
    FunctionalProfile::build(Arc::new(ensemble.clone()), eps_levels)
}

impl FunctionalProfile {
    pub fn build(ensemble: Arc<TrajectoryEnsemble>, eps_levels: &[f64]) -> Result<Self> {
        if ensemble.is_empty() {
            return Err(Error::invalid(
                "cannot build a profile from an empty ensemble",
            ));
        }
        if ensemble.len() < 2 {
            return Err(Error::invalid(
                "a profile needs at least two runs; use FunctionalProfile::deterministic for one",
            ));
        }
        for &e in eps_levels {
            check_probability("eps level", e)?;
        }
        let mut levels: Vec<f64> = eps_levels.to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();

        let len = ensemble.max_len();
        let mut median = Vec::with_capacity(len);
        let mut support = Vec::with_capacity(len);
        let mut envelopes: Vec<Vec<f64>> = vec![Vec::with_capacity(len); levels.len()];
        let mut column = Vec::with_capacity(ensemble.len());
        for t in 0..len {
            column.clear();
            column.extend(ensemble.runs().iter().filter_map(|r| r.get(t).copied()));
            column.sort_by(f64::total_cmp);
            support.push(column.len() as u32);
            median.push(quantile_sorted(&column, 0.5));
            for (curve, eps) in envelopes.iter_mut().zip(&levels) {
                curve.push(quantile_sorted(&column, 1.0 - eps));
            }
        }
        let grid_step = ensemble.grid_step();
        Ok(FunctionalProfile {
            grid_step,
            horizon: (len - 1) as f64 * grid_step,
            median,
            support,
            envelopes: levels.into_iter().zip(envelopes).collect(),
            runtime_samples: ensemble.run_durations(),
            source: Some(ensemble),
        })
    }

    /// Profile for a job with a single known run: the run scaled by
    /// `inflation`, treated as certain.
    pub fn deterministic(run: &Trajectory, inflation: f64, eps_levels: &[f64]) -> Result<Self> {
        if !(inflation >= 1.0) {
            return Err(Error::invalid(format!(
                "inflation must be >= 1, got {inflation}"
            )));
        }
        let inflated: Vec<f64> = run.samples().iter().map(|v| v * inflation).collect();
        let ens = TrajectoryEnsemble::new(run.grid_step(), vec![inflated.clone(), inflated])?;
        FunctionalProfile::build(Arc::new(ens), eps_levels)
    }

    pub fn grid_step(&self) -> Seconds {
        self.grid_step
    }

    pub fn horizon(&self) -> Seconds {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.median.len()
    }

    pub fn is_empty(&self) -> bool {
        self.median.is_empty()
    }

    pub fn median_curve(&self) -> &[Megabytes] {
        &self.median
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn runtime_samples(&self) -> &[Seconds] {
        &self.runtime_samples
    }

    pub fn source(&self) -> Option<&Arc<TrajectoryEnsemble>> {
        self.source.as_ref()
    }

    pub fn eps_levels(&self) -> Vec<f64> {
        self.envelopes.iter().map(|(e, _)| *e).collect()
    }

    /// Drops the retained ensemble; joint queries become unsupported.
    pub fn without_source(mut self) -> Self {
        self.source = None;
        self
    }

    /// Pointwise nearest-rank `q`-quantile curve over the source runs.
    pub fn quantile_curve(&self, q: f64) -> Result<Vec<Megabytes>> {
        let src = self.require_source("quantile curve")?;
        let len = self.len();
        let mut column = Vec::with_capacity(src.len());
        let mut out = Vec::with_capacity(len);
        for t in 0..len {
            column.clear();
            column.extend(src.runs().iter().filter_map(|r| r.get(t).copied()));
            column.sort_by(f64::total_cmp);
            out.push(quantile_sorted(&column, q));
        }
        Ok(out)
    }

    /// The risk-adjusted upper envelope `U_eps(t)`, the pointwise
    /// `(1 - eps)`-quantile.
    pub fn envelope(&self, eps: f64) -> Result<Cow<'_, [Megabytes]>> {
        if let Some((_, curve)) = self.envelopes.iter().find(|(e, _)| *e == eps) {
            return Ok(Cow::Borrowed(curve));
        }
        check_probability("eps", eps)?;
        Ok(Cow::Owned(self.quantile_curve(1.0 - eps)?))
    }

    /// Interquartile band (25th and 75th pointwise percentiles).
    pub fn iqr_band(&self) -> Result<(Vec<Megabytes>, Vec<Megabytes>)> {
        Ok((self.quantile_curve(0.25)?, self.quantile_curve(0.75)?))
    }

    pub fn envelope_peak(&self, eps: f64, window: TimeWindow) -> Result<EnvelopePeak> {
        let cells = window.cells(self.grid_step);
        self.envelope_peak_cells(eps, cells)
    }

    /// Maximum of `U_eps` over a cell range, clamped to the horizon.
    pub fn envelope_peak_cells(&self, eps: f64, cells: CellRange) -> Result<EnvelopePeak> {
        let env = self.envelope(eps)?;
        let r = cells.clamp(env.len());
        let value = env[r.lo..r.hi].iter().copied().fold(0.0, f64::max);
        Ok(EnvelopePeak {
            value,
            truncated: cells.hi > env.len(),
        })
    }

    pub fn memory_admissible(
        &self,
        capacity: Megabytes,
        window: TimeWindow,
        eps: f64,
        method: AdmissionMethod,
    ) -> Result<Admissibility> {
        self.memory_admissible_cells(capacity, window.cells(self.grid_step), eps, method)
    }

    pub fn memory_admissible_cells(
        &self,
        capacity: Megabytes,
        cells: CellRange,
        eps: f64,
        method: AdmissionMethod,
    ) -> Result<Admissibility> {
        if !(capacity > 0.0) {
            return Err(Error::invalid(format!(
                "capacity must be > 0, got {capacity}"
            )));
        }
        check_probability("eps", eps)?;
        let truncated = cells.hi > self.len();
        match method {
            AdmissionMethod::Joint => {
                let src = self.source.as_ref().ok_or_else(|| {
                    Error::UnsupportedQuery("joint admission needs the source ensemble".into())
                })?;
                let n = src.len();
                let ok = src
                    .runs()
                    .iter()
                    .filter(|run| {
                        let r = cells.clamp(run.len());
                        run[r.lo..r.hi].iter().all(|v| *v <= capacity)
                    })
                    .count();
                Ok(Admissibility {
                    admissible: ok >= required_count(1.0 - eps, n),
                    probability: ok as f64 / n as f64,
                    truncated,
                })
            }
            AdmissionMethod::Envelope => {
                let peak = self.envelope_peak_cells(eps, cells)?;
                // pointwise coverage, worst grid point in the window
                let probability = match &self.source {
                    Some(src) => {
                        let r = cells.clamp(self.len());
                        (r.lo..r.hi)
                            .map(|t| {
                                let alive = src.runs().iter().filter_map(|run| run.get(t));
                                let (mut ok, mut n) = (0usize, 0usize);
                                for v in alive {
                                    n += 1;
                                    ok += usize::from(*v <= capacity);
                                }
                                ok as f64 / n as f64
                            })
                            .fold(1.0, f64::min)
                    }
                    None => f64::from(u8::from(peak.value <= capacity)),
                };
                Ok(Admissibility {
                    admissible: peak.value <= capacity,
                    probability,
                    truncated: peak.truncated,
                })
            }
        }
    }

    /// `Pr(T * remaining_fraction <= deadline_from_now) >= 1 - alpha_t` over
    /// the runtime samples.
    pub fn deadline_admissible(
        &self,
        remaining_fraction: f64,
        deadline_from_now: Seconds,
        alpha_t: f64,
    ) -> Result<Admissibility> {
        if !(remaining_fraction > 0.0 && remaining_fraction <= 1.0) {
            return Err(Error::invalid(format!(
                "remaining fraction must lie in (0, 1], got {remaining_fraction}"
            )));
        }
        check_probability("alpha_t", alpha_t)?;
        let n = self.runtime_samples.len();
        let ok = self
            .runtime_samples
            .iter()
            .filter(|s| *s * remaining_fraction <= deadline_from_now)
            .count();
        Ok(Admissibility {
            admissible: ok >= required_count(1.0 - alpha_t, n),
            probability: ok as f64 / n as f64,
            truncated: false,
        })
    }

    /// Predicts the continuation of `observed_prefix` from its `k` nearest
    /// source runs (root-mean-square distance over the overlapping grid).
    pub fn predict_continuation(
        &self,
        observed_prefix: &[Megabytes],
        k: usize,
    ) -> Result<Continuation> {
        let src = self.require_source("continuation prediction")?;
        if k == 0 || k > src.len() {
            return Err(Error::invalid(format!(
                "k must lie in [1, {}], got {k}",
                src.len()
            )));
        }
        let m = observed_prefix.len();
        let mut ranked: Vec<(f64, usize)> = src
            .runs()
            .iter()
            .enumerate()
            .map(|(i, run)| {
                let overlap = m.min(run.len());
                let d = if overlap == 0 {
                    f64::INFINITY
                } else {
                    let ss: f64 = observed_prefix[..overlap]
                        .iter()
                        .zip(&run[..overlap])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (ss / overlap as f64).sqrt()
                };
                (d, i)
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let neighbors: Vec<usize> = ranked.iter().take(k).map(|(_, i)| *i).collect();

        let suffix_len = neighbors
            .iter()
            .map(|&i| src.runs()[i].len().saturating_sub(m))
            .max()
            .unwrap_or(0);
        let mut median = Vec::with_capacity(suffix_len);
        let mut lower = Vec::with_capacity(suffix_len);
        let mut upper = Vec::with_capacity(suffix_len);
        let mut column = Vec::with_capacity(k);
        for t in m..m + suffix_len {
            column.clear();
            column.extend(
                neighbors
                    .iter()
                    .filter_map(|&i| src.runs()[i].get(t).copied()),
            );
            column.sort_by(f64::total_cmp);
            median.push(quantile_sorted(&column, 0.5));
            lower.push(quantile_sorted(&column, 0.25));
            upper.push(quantile_sorted(&column, 0.75));
        }
        Ok(Continuation {
            median,
            lower,
            upper,
            neighbors,
        })
    }

    /// Rebuilds the profile with one more completed run.
    pub fn refresh(&self, completed_run: &Trajectory) -> Result<FunctionalProfile> {
        let src = self.require_source("profile refresh")?;
        if (completed_run.grid_step() - self.grid_step).abs() > 1e-9 * self.grid_step {
            return Err(Error::invalid(format!(
                "run grid step {} does not match profile grid step {}",
                completed_run.grid_step(),
                self.grid_step
            )));
        }
        let ens = src.with_run(completed_run.samples().to_vec());
        FunctionalProfile::build(Arc::new(ens), &self.eps_levels())
    }

    /// How far a planned interval starting at cell `start` may extend while
    /// staying admissible on `capacity` at risk `eps`.
    ///
    /// `envelope_end` is the first cell at or after `start` where `U_eps`
    /// exceeds the capacity. Beyond the horizon the last envelope value is
    /// held. `joint_end` is the largest exclusive end such that at least a
    /// `1 - eps` fraction of runs stay within capacity over `[start, end)`.
    pub fn admissible_extent(
        &self,
        start: usize,
        capacity: Megabytes,
        eps: f64,
    ) -> Result<AdmissibleExtent> {
        let env = self.envelope(eps)?;
        let envelope_end = match env.iter().skip(start).position(|v| *v > capacity) {
            Some(off) => start + off,
            None => {
                let tail = env.last().copied().unwrap_or(0.0);
                if start >= env.len() && tail > capacity {
                    start
                } else if tail > capacity {
                    env.len()
                } else {
                    usize::MAX
                }
            }
        };
        let src = self.require_source("joint admission")?;
        let n = src.len();
        let allowed = n - required_count(1.0 - eps, n).min(n);
        let mut first_exceed: Vec<usize> = src
            .runs()
            .iter()
            .map(|run| {
                run.iter()
                    .skip(start)
                    .position(|v| *v > capacity)
                    .map_or(usize::MAX, |off| start + off)
            })
            .collect();
        first_exceed.sort_unstable();
        let joint_end = first_exceed.get(allowed).copied().unwrap_or(usize::MAX);
        Ok(AdmissibleExtent {
            envelope_end,
            joint_end,
        })
    }

    fn require_source(&self, what: &str) -> Result<&Arc<TrajectoryEnsemble>> {
        self.source
            .as_ref()
            .ok_or_else(|| Error::UnsupportedQuery(format!("{what} needs the source ensemble")))
    }
}

/// Nearest-rank helper exposed for callers that reproduce profile quantiles.
pub fn nearest_rank_index(q: f64, n: usize) -> usize {
    nearest_rank(q, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ens(runs: Vec<Vec<f64>>) -> TrajectoryEnsemble {
        TrajectoryEnsemble::new(60.0, runs).unwrap()
    }

    #[test]
    fn identical_runs_give_the_run_as_every_envelope() {
        let f = vec![1.0, 5.0, 3.0, 9.0];
        let p = build_profile(&ens(vec![f.clone(); 5]), &[0.01, 0.05, 0.25]).unwrap();
        for eps in [0.01, 0.05, 0.25, 0.4] {
            assert_eq!(&*p.envelope(eps).unwrap(), f.as_slice());
        }
        assert_eq!(p.median_curve(), f.as_slice());
    }

    #[test]
    fn nearest_rank_envelope_on_one_to_hundred() {
        // one grid point, values 1..100 in scrambled order
        let runs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![((i * 37) % 100 + 1) as f64])
            .collect();
        let p = build_profile(&ens(runs), &[0.25]).unwrap();
        let mut sorted: Vec<f64> = (1..=100).map(f64::from).collect();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(p.envelope(0.25).unwrap()[0], sorted[75 - 1]);
        assert_eq!(p.envelope(0.25).unwrap()[0], 75.0);
    }

    #[test]
    fn iqr_band_is_25th_and_75th_percentiles() {
        let runs: Vec<Vec<f64>> = (1..=8)
            .map(|v| vec![f64::from(v), f64::from(v) * 2.0])
            .collect();
        let p = build_profile(&ens(runs), &[0.05]).unwrap();
        let (lo, hi) = p.iqr_band().unwrap();
        assert_eq!(lo, vec![2.0, 4.0]);
        assert_eq!(hi, vec![6.0, 12.0]);
    }

    #[test]
    fn short_runs_drop_out_of_support() {
        let p = build_profile(&ens(vec![vec![1.0, 1.0, 1.0], vec![2.0]]), &[0.5]).unwrap();
        assert_eq!(p.support(), &[2, 1, 1]);
        assert_eq!(p.horizon(), 120.0);
        assert_eq!(p.runtime_samples(), &[120.0, 0.0]);
    }

    #[test]
    fn build_rejects_empty_and_single_run() {
        assert!(matches!(
            build_profile(&ens(vec![]), &[0.05]),
            Err(Error::InvalidInput(_))
        ));
        assert!(build_profile(&ens(vec![vec![1.0]]), &[0.05]).is_err());
    }

    fn step_profile() -> FunctionalProfile {
        // 4 MB for the first 10 minutes, 18 MB for the next 10, 1-minute grid
        let run: Vec<f64> = (0..20).map(|i| if i < 10 { 4.0 } else { 18.0 }).collect();
        build_profile(&ens(vec![run; 3]), &[0.05]).unwrap()
    }

    #[test]
    fn envelope_peak_on_step_curve() {
        let p = step_profile();
        let full = p.envelope_peak(0.05, TimeWindow::new(0.0, 1200.0)).unwrap();
        assert_eq!(full.value, 18.0);
        assert!(full.truncated);
        let early = p.envelope_peak(0.05, TimeWindow::new(0.0, 540.0)).unwrap();
        assert_eq!(early.value, 4.0);
        assert!(!early.truncated);
    }

    #[test]
    fn flat_envelope_peak_is_constant() {
        let p = build_profile(&ens(vec![vec![4.0; 30]; 4]), &[0.05]).unwrap();
        for (a, b) in [(0.0, 60.0), (300.0, 900.0), (0.0, 1740.0)] {
            assert_eq!(
                p.envelope_peak(0.05, TimeWindow::new(a, b)).unwrap().value,
                4.0
            );
        }
    }

    #[test]
    fn joint_admission_all_below_capacity() {
        let p = build_profile(&ens(vec![vec![8192.0; 20]; 10]), &[0.05]).unwrap();
        for eps in [0.01, 0.05, 0.5] {
            let a = p
                .memory_admissible(
                    10240.0,
                    TimeWindow::new(0.0, 600.0),
                    eps,
                    AdmissionMethod::Joint,
                )
                .unwrap();
            assert!(a.admissible);
            assert_eq!(a.probability, 1.0);
        }
    }

    #[test]
    fn joint_admission_seven_of_hundred_exceed() {
        let mut runs = vec![vec![9000.0; 30]; 100];
        for (k, run) in runs.iter_mut().enumerate().take(7) {
            run[3 + k] = 11000.0;
        }
        let p = build_profile(&ens(runs), &[0.05, 0.1]).unwrap();
        let w = TimeWindow::new(0.0, 1200.0);
        let a = p
            .memory_admissible(10240.0, w, 0.05, AdmissionMethod::Joint)
            .unwrap();
        assert_eq!(a.probability, 0.93);
        assert!(!a.admissible);
        let b = p
            .memory_admissible(10240.0, w, 0.10, AdmissionMethod::Joint)
            .unwrap();
        assert!(b.admissible);
        // pointwise each grid point has at most one exceeding run
        let e = p
            .memory_admissible(10240.0, w, 0.05, AdmissionMethod::Envelope)
            .unwrap();
        assert!(e.admissible);
        assert_eq!(e.probability, 0.99);
    }

    #[test]
    fn joint_admission_needs_source() {
        let p = step_profile().without_source();
        let err = p
            .memory_admissible(
                20.0,
                TimeWindow::new(0.0, 60.0),
                0.05,
                AdmissionMethod::Joint,
            )
            .unwrap_err();
        assert!(matches!(err, Error::UnsupportedQuery(_)));
        // the cached envelope still answers envelope queries
        assert!(
            p.memory_admissible(
                20.0,
                TimeWindow::new(0.0, 60.0),
                0.05,
                AdmissionMethod::Envelope
            )
            .unwrap()
            .admissible
        );
    }

    #[test]
    fn deadline_admission_examples() {
        let runs = vec![vec![1.0; 11]; 4]; // 10 s at 1 s grid
        let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.05]).unwrap();
        assert!(p.deadline_admissible(1.0, 20.0, 0.01).unwrap().admissible);
        assert!(p.deadline_admissible(1.0, 20.0, 0.5).unwrap().admissible);
        assert!(!p.deadline_admissible(1.0, 0.0, 0.05).unwrap().admissible);
        assert!(p.deadline_admissible(0.0, 1.0, 0.05).is_err());

        // 100 runs, 93 short enough
        let runs: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![1.0; if i < 93 { 11 } else { 31 }])
            .collect();
        let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.05]).unwrap();
        let a = p.deadline_admissible(1.0, 15.0, 0.05).unwrap();
        assert_eq!(a.probability, 0.93);
        assert!(!a.admissible);
        assert!(p.deadline_admissible(1.0, 15.0, 0.10).unwrap().admissible);
    }

    #[test]
    fn continuation_picks_nearest_run() {
        let a = vec![1.0, 2.0, 3.0, 10.0, 11.0];
        let b = vec![5.0, 6.0, 7.0, 20.0, 21.0];
        let p = build_profile(&ens(vec![a.clone(), b.clone()]), &[0.05]).unwrap();
        // distance to A: rms(0.5,0.5,0.5)=0.5, to B: rms(3.5,3.5,3.5)=3.5
        let c = p.predict_continuation(&[1.5, 2.5, 3.5], 1).unwrap();
        assert_eq!(c.median, vec![10.0, 11.0]);
        assert_eq!(c.neighbors, vec![0]);
        let c = p.predict_continuation(&b[..2], 1).unwrap();
        assert_eq!(c.median, b[2..].to_vec());
    }

    #[test]
    fn continuation_of_identical_runs_and_too_long_prefix() {
        let f = vec![3.0, 4.0, 5.0, 6.0];
        let p = build_profile(&ens(vec![f.clone(); 6]), &[0.05]).unwrap();
        let c = p.predict_continuation(&[100.0, 0.0], 5).unwrap();
        assert_eq!(c.median, vec![5.0, 6.0]);
        assert_eq!(c.lower, c.upper);
        let c = p.predict_continuation(&[3.0; 9], 2).unwrap();
        assert!(c.median.is_empty());
        assert!(p.predict_continuation(&[3.0], 7).is_err());
        assert!(p.predict_continuation(&[3.0], 0).is_err());
    }

    #[test]
    fn refresh_examples() {
        let f = vec![2.0, 3.0, 4.0];
        let p = build_profile(&ens(vec![f.clone(); 4]), &[0.05, 0.2]).unwrap();
        let r = p
            .refresh(&Trajectory::new(60.0, f.clone()).unwrap())
            .unwrap();
        assert_eq!(r.envelope(0.05).unwrap(), p.envelope(0.05).unwrap());
        let spiky = Trajectory::new(60.0, vec![2.0, 50.0, 4.0]).unwrap();
        let r = p.refresh(&spiky).unwrap();
        assert!(r.envelope(0.05).unwrap()[1] >= p.envelope(0.05).unwrap()[1]);
        assert_eq!(r.envelope(0.05).unwrap()[1], 50.0);
    }

    #[test]
    fn refresh_nine_to_ten_keeps_ninth_order_statistic() {
        let runs: Vec<Vec<f64>> = (1..=9).map(|v| vec![f64::from(v)]).collect();
        let p = build_profile(&ens(runs), &[0.1]).unwrap();
        // oracle: sort and index
        let mut before: Vec<f64> = (1..=9).map(f64::from).collect();
        before.sort_by(f64::total_cmp);
        let k9 = (0.9f64 * 9.0).ceil() as usize;
        assert_eq!(p.envelope(0.1).unwrap()[0], before[k9 - 1]);
        let r = p
            .refresh(&Trajectory::new(60.0, vec![10.0]).unwrap())
            .unwrap();
        let after: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(r.envelope(0.1).unwrap()[0], after[9 - 1]);
        assert_eq!(r.envelope(0.1).unwrap()[0], 9.0);
    }

    #[test]
    fn admissible_extent_matches_window_queries() {
        let mut runs = vec![vec![5.0; 40]; 20];
        runs[0][10] = 50.0;
        runs[1][12] = 50.0;
        runs[2][30] = 50.0;
        let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.1]).unwrap();
        // eps 0.1 over 20 runs allows 2 failures: the third exceed (cell 30) bounds the window
        let ext = p.admissible_extent(0, 10.0, 0.1).unwrap();
        assert_eq!(ext.joint_end, 30);
        assert_eq!(ext.envelope_end, usize::MAX);
        let ok = p
            .memory_admissible_cells(10.0, CellRange::new(0, 30), 0.1, AdmissionMethod::Joint)
            .unwrap();
        let bad = p
            .memory_admissible_cells(10.0, CellRange::new(0, 31), 0.1, AdmissionMethod::Joint)
            .unwrap();
        assert!(ok.admissible && !bad.admissible);
        let ext = p.admissible_extent(11, 10.0, 0.1).unwrap();
        assert_eq!(ext.joint_end, usize::MAX);
    }

    /// Pointwise exceedance can be bounded while the whole-window exceedance
    /// is not: each run spikes at a different grid point.
    #[test]
    fn envelope_bound_does_not_bound_joint_probability() {
        let runs: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let mut r = vec![1.0; 20];
                r[i] = 100.0;
                r
            })
            .collect();
        let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.05]).unwrap();
        let cells = CellRange::new(0, 20);
        let env = p
            .memory_admissible_cells(10.0, cells, 0.05, AdmissionMethod::Envelope)
            .unwrap();
        let joint = p
            .memory_admissible_cells(10.0, cells, 0.05, AdmissionMethod::Joint)
            .unwrap();
        assert!(env.admissible);
        assert_eq!(env.probability, 0.95);
        assert!(!joint.admissible);
        assert_eq!(joint.probability, 0.0);
    }

    fn arb_runs() -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(proptest::collection::vec(0u16..500, 1..25), 2..30).prop_map(
            |rs| {
                rs.into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect()
            },
        )
    }

    proptest! {
        #[test]
        fn quantile_monotone_in_eps_and_median_below(runs in arb_runs()) {
            let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.01, 0.05, 0.2, 0.5]).unwrap();
            let levels = [0.01, 0.05, 0.2, 0.5];
            for w in levels.windows(2) {
                let lo = p.envelope(w[0]).unwrap();
                let hi = p.envelope(w[1]).unwrap();
                for t in 0..p.len() {
                    prop_assert!(lo[t] >= hi[t]);
                }
            }
            for &eps in &levels {
                let env = p.envelope(eps).unwrap();
                for t in 0..p.len() {
                    prop_assert!(p.median_curve()[t] <= env[t]);
                    prop_assert!(env[t] >= 0.0);
                }
            }
        }

        #[test]
        fn outputs_are_permutation_invariant(runs in arb_runs(), rot in 0usize..30) {
            let mut shuffled = runs.clone();
            let n = shuffled.len();
            shuffled.rotate_left(rot % n);
            shuffled.reverse();
            let a = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.05, 0.3]).unwrap();
            let b = build_profile(&TrajectoryEnsemble::new(1.0, shuffled).unwrap(), &[0.05, 0.3]).unwrap();
            prop_assert_eq!(a.median_curve(), b.median_curve());
            prop_assert_eq!(a.envelope(0.05).unwrap(), b.envelope(0.05).unwrap());
            prop_assert_eq!(a.support(), b.support());
            let cells = CellRange::new(0, 10);
            let ja = a.memory_admissible_cells(250.0, cells, 0.3, AdmissionMethod::Joint).unwrap();
            let jb = b.memory_admissible_cells(250.0, cells, 0.3, AdmissionMethod::Joint).unwrap();
            prop_assert_eq!(ja, jb);
        }

        #[test]
        fn duplicating_the_ensemble_keeps_quantiles(runs in arb_runs()) {
            let mut doubled = runs.clone();
            doubled.extend(runs.iter().cloned());
            let a = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.05, 0.25]).unwrap();
            // refresh one copy at a time
            let mut b = a.clone();
            for run in &doubled[a.source().unwrap().len()..] {
                b = b.refresh(&Trajectory::new(1.0, run.clone()).unwrap()).unwrap();
            }
            prop_assert_eq!(a.envelope(0.05).unwrap(), b.envelope(0.05).unwrap());
            prop_assert_eq!(a.envelope(0.25).unwrap(), b.envelope(0.25).unwrap());
        }

        #[test]
        fn widening_a_window_never_lowers_the_peak(runs in arb_runs(), a in 0usize..20, w1 in 0usize..10, w2 in 0usize..10) {
            let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.1]).unwrap();
            let narrow = p.envelope_peak_cells(0.1, CellRange::new(a, a + w1 + 1)).unwrap().value;
            let wide = p.envelope_peak_cells(0.1, CellRange::new(a.saturating_sub(w2), a + w1 + w2 + 1)).unwrap().value;
            prop_assert!(wide >= narrow);
        }

        #[test]
        fn extent_agrees_with_joint_queries(runs in arb_runs(), start in 0usize..10, cap in 100.0f64..450.0) {
            let p = build_profile(&TrajectoryEnsemble::new(1.0, runs).unwrap(), &[0.1]).unwrap();
            let ext = p.admissible_extent(start, cap, 0.1).unwrap();
            let limit = ext.joint_end.min(p.len() + 2);
            for end in start + 1..=limit.min(p.len() + 1) {
                let a = p.memory_admissible_cells(cap, CellRange::new(start, end), 0.1, AdmissionMethod::Joint).unwrap();
                prop_assert_eq!(a.admissible, end <= ext.joint_end, "end {}", end);
            }
        }
    }
}
