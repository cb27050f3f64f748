//! Adapting segmentation to a job's remaining work.
//!
//! An offered wall-clock window maps to the job-relative interval starting
//! at the job's planned progress. The plan covers the longest prefix that
//! stays admissible on the offered capacity, bounded by the window and by
//! the remaining work, and is then segmented into fragments.

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use super::JobSpec;
use crate::cluster::{ExecutionWindow, SliceCatalog};
use crate::profiles::{AdmissibleExtent, AdmissionMethod, FunctionalProfile, RiskParams};
use crate::protocol::segment::{segment_window, SegmentError, SegmentationConfig};
use crate::trajectory::cells_in;
use crate::{Megabytes, Seconds};

#[derive(Clone, Copy, Debug)]
pub struct PlanParams<'a> {
    pub catalog: &'a SliceCatalog,
    pub risk: RiskParams,
    pub seg: &'a SegmentationConfig,
    pub method: AdmissionMethod,
}

/// Memo of admissible extents keyed by (start cell, capacity). Must be
/// cleared whenever the job's profile changes.
#[derive(Debug, Default)]
pub struct ExtentCache {
    map: RefCell<HashMap<(usize, u64), AdmissibleExtent>>,
}

impl ExtentCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&self) {
        self.map.borrow_mut().clear();
    }

    fn get(
        &self,
        profile: &FunctionalProfile,
        start: usize,
        capacity: Megabytes,
        eps: f64,
    ) -> crate::Result<AdmissibleExtent> {
        let key = (start, capacity.to_bits());
        if let Some(e) = self.map.borrow().get(&key) {
            return Ok(*e);
        }
        let e = profile.admissible_extent(start, capacity, eps)?;
        self.map.borrow_mut().insert(key, e);
        Ok(e)
    }
}

/// Why a job cannot use an offered window.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Decline {
    HybridFallback,
    NothingLeft,
    WindowTooShort,
    Inadmissible,
    Profile(String),
}

impl fmt::Display for Decline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Decline::HybridFallback => write!(f, "hybrid fallback"),
            Decline::NothingLeft => write!(f, "no remaining work"),
            Decline::WindowTooShort => write!(f, "window too short"),
            Decline::Inadmissible => write!(f, "inadmissible at offered capacity"),
            Decline::Profile(m) => write!(f, "profile query failed: {m}"),
        }
    }
}

/// Planning inputs describing one job's current position.
#[derive(Clone, Copy)]
pub struct JobPlanState<'a> {
    pub job: &'a JobSpec,
    pub profile: &'a FunctionalProfile,
    pub cache: Option<&'a ExtentCache>,
    /// Completed plus already-planned work, in seconds.
    pub progress: Seconds,
    /// Earliest wall-clock start, the end of any already-planned subjobs.
    pub not_before: Seconds,
    /// Observed capacity exceedances: (job-relative cell, memory seen).
    pub oom_marks: &'a [(usize, Megabytes)],
}

/// Cheap feasibility summary of a plan.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlanExtent {
    pub start: Seconds,
    /// Job-relative cell the plan resumes from.
    pub start_cell: usize,
    pub work_cells: usize,
    /// Reserved cells; exceeds `work_cells` only when a short remainder is
    /// padded up to `tau_min`.
    pub reserved_cells: usize,
}

impl PlanExtent {
    pub fn reserved_duration(&self, grid_step: Seconds) -> Seconds {
        self.reserved_cells as f64 * grid_step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlannedFragment {
    pub start: Seconds,
    pub end: Seconds,
    pub assigned_capacity: Megabytes,
    pub work_from: Seconds,
    pub work_to: Seconds,
    pub predicted_peak: Megabytes,
    pub forced_cut_after: bool,
}

/// Longest admissible plan for the window, without segmenting it.
pub fn plan_extent(
    state: &JobPlanState<'_>,
    window: &ExecutionWindow,
    params: &PlanParams<'_>,
) -> Result<PlanExtent, Decline> {
    if !state.job.atomizable {
        return Err(Decline::HybridFallback);
    }
    let g = state.profile.grid_step();
    let p = cells_in(state.progress, g);
    let total = cells_in(state.job.total_work, g);
    if p >= total {
        return Err(Decline::NothingLeft);
    }
    let remaining = total - p;
    let start = window.start.max(state.not_before);
    let avail = window.end() - start;
    let w_cells = (avail / g + 1e-9).floor().max(0.0) as usize;
    let min = params.seg.min_cells(g);
    if w_cells < min {
        return Err(Decline::WindowTooShort);
    }

    let ext = match state.cache {
        Some(c) => c.get(state.profile, p, window.capacity, params.risk.eps),
        None => state
            .profile
            .admissible_extent(p, window.capacity, params.risk.eps),
    }
    .map_err(|e| Decline::Profile(e.to_string()))?;
    let mut end = match params.method {
        AdmissionMethod::Joint => ext.end(),
        AdmissionMethod::Envelope => ext.envelope_end,
    };
    if let Some(c) = state
        .oom_marks
        .iter()
        .filter(|(c, m)| *c >= p && *m > window.capacity)
        .map(|(c, _)| *c)
        .min()
    {
        end = end.min(c);
    }
    let feasible = end.saturating_sub(p);
    let work = remaining.min(w_cells).min(feasible);
    if work == remaining {
        return Ok(PlanExtent {
            start,
            start_cell: p,
            work_cells: work,
            reserved_cells: work.max(min),
        });
    }
    if work < min {
        return Err(if feasible < min {
            Decline::Inadmissible
        } else {
            Decline::WindowTooShort
        });
    }
    Ok(PlanExtent {
        start,
        start_cell: p,
        work_cells: work,
        reserved_cells: work,
    })
}

/// Segments the admissible prefix into subjob plans whose work intervals
/// advance contiguously from the job's progress.
pub fn plan_segments(
    state: &JobPlanState<'_>,
    window: &ExecutionWindow,
    params: &PlanParams<'_>,
) -> Result<Vec<PlannedFragment>, Decline> {
    let ext = plan_extent(state, window, params)?;
    let g = state.profile.grid_step();
    let env = state
        .profile
        .envelope(params.risk.eps)
        .map_err(|e| Decline::Profile(e.to_string()))?;
    let last = env.last().copied().unwrap_or(0.0);
    let at = |c: usize| env.get(c).copied().unwrap_or(last);

    let mut reserved_cells = ext.reserved_cells;
    let mut work_cells = ext.work_cells;
    let fragments = loop {
        let u: Vec<f64> = (0..reserved_cells)
            .map(|c| {
                if c < work_cells {
                    at(ext.start_cell + c)
                } else {
                    0.0
                }
            })
            .collect();
        match segment_window(&u, g, params.catalog, window.capacity, params.seg) {
            Ok(f) => break (f, u),
            Err(SegmentError::TauBounds { .. }) => {
                // a single fragment of at most tau_max always fits the bounds
                let max = params.seg.max_cells(g);
                if reserved_cells <= max {
                    return Err(Decline::WindowTooShort);
                }
                reserved_cells = max;
                work_cells = work_cells.min(max);
            }
            Err(SegmentError::Infeasible { .. }) => return Err(Decline::Inadmissible),
            Err(SegmentError::WindowTooShort { .. }) => return Err(Decline::WindowTooShort),
            Err(SegmentError::NotInCatalog(_)) => return Err(Decline::Inadmissible),
        }
    };
    let (frags, u) = fragments;
    let cell_time = |c: usize| ext.start + c as f64 * g;
    let work_time = |c: usize| (ext.start_cell + c.min(work_cells)) as f64 * g;
    Ok(frags
        .iter()
        .map(|f| PlannedFragment {
            start: cell_time(f.cells.lo),
            end: cell_time(f.cells.hi),
            assigned_capacity: f.capacity,
            work_from: work_time(f.cells.lo),
            work_to: work_time(f.cells.hi),
            predicted_peak: u[f.cells.lo..f.cells.hi]
                .iter()
                .copied()
                .fold(0.0, f64::max),
            forced_cut_after: f.forced_cut_after,
        })
        .collect())
}
