//! Job-side segmentation of an offered window into capacity-bounded
//! fragments.
//!
//! The envelope is smoothed by a sliding maximum, the whole window is
//! planned at the smallest covering catalog capacity, and the plan is then
//! refined by recursive cuts at catalog-class crossings. A cut is kept only
//! when it lowers reserved capacity-time by at least `hysteresis_delta`
//! relative to the parent. Fragments longer than `tau_max` are cut into
//! balanced pieces, and a final pass merges neighbours whose separation no
//! longer pays for itself.

use serde::Serialize;
use thiserror::Error;

use crate::cluster::SliceCatalog;
use crate::error::{Error, Result};
use crate::trajectory::{cells_covering, CellRange};
use crate::{Megabytes, Seconds};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SegmentationConfig {
    pub tau_min: Seconds,
    pub tau_max: Seconds,
    pub smoothing_window: Seconds,
    pub hysteresis_delta: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            tau_min: 300.0,
            tau_max: 3600.0,
            smoothing_window: 30.0,
            hysteresis_delta: 0.1,
        }
    }
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min > 0.0) || !self.tau_min.is_finite() {
            return Err(Error::Config(format!(
                "tau_min must be > 0, got {}",
                self.tau_min
            )));
        }
        if !(self.tau_max >= self.tau_min) {
            return Err(Error::Config(format!(
                "tau_max ({}) must be >= tau_min ({})",
                self.tau_max, self.tau_min
            )));
        }
        if !(self.smoothing_window >= 0.0) || !self.smoothing_window.is_finite() {
            return Err(Error::Config("smoothing_window must be >= 0".into()));
        }
        if !(self.hysteresis_delta > 0.0 && self.hysteresis_delta < 1.0) {
            return Err(Error::Config(format!(
                "hysteresis_delta must lie in (0, 1), got {}",
                self.hysteresis_delta
            )));
        }
        Ok(())
    }

    pub fn min_cells(&self, grid_step: Seconds) -> usize {
        cells_covering(self.tau_min, grid_step).max(1)
    }

    pub fn max_cells(&self, grid_step: Seconds) -> usize {
        ((self.tau_max / grid_step + 1e-9).floor() as usize).max(self.min_cells(grid_step))
    }

    /// Half-width, in cells, of the sliding-maximum smoother.
    pub fn smoothing_radius(&self, grid_step: Seconds) -> usize {
        (self.smoothing_window / (2.0 * grid_step) + 1e-9).floor() as usize
    }
}

/// One fragment of a plan: window-relative cells and the capacity reserved.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Fragment {
    #[serde(skip)]
    pub cells: CellRange,
    pub capacity: Megabytes,
    /// The boundary after this fragment was forced by `tau_max` rather than
    /// chosen for slack.
    pub forced_cut_after: bool,
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum SegmentError {
    #[error("offered capacity {0} MB is not in the slice catalog")]
    NotInCatalog(Megabytes),
    #[error("window of {cells} cells is shorter than the {min}-cell minimum")]
    WindowTooShort { cells: usize, min: usize },
    #[error("smoothed envelope peak {peak} MB does not fit the offered {offered} MB")]
    Infeasible { peak: Megabytes, offered: Megabytes },
    #[error("a {len}-cell fragment cannot be cut into pieces within [{min}, {max}] cells")]
    TauBounds { len: usize, min: usize, max: usize },
}

/// Sliding maximum over `[i - radius, i + radius]`.
pub fn sliding_max(values: &[f64], radius: usize) -> Vec<f64> {
    if radius == 0 {
        return values.to_vec();
    }
    let n = values.len();
    let mut out = Vec::with_capacity(n);
    let mut dq: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0;
    for i in 0..n {
        let hi = (i + radius).min(n - 1);
        while next <= hi {
            while dq.back().is_some_and(|&j| values[j] <= values[next]) {
                dq.pop_back();
            }
            dq.push_back(next);
            next += 1;
        }
        while dq.front().is_some_and(|&j| j + radius < i) {
            dq.pop_front();
        }
        out.push(values[*dq.front().expect("window is non-empty")]);
    }
    out
}

/// Reserved capacity-time of a plan, in MB·s.
pub fn reserved(fragments: &[Fragment], grid_step: Seconds) -> f64 {
    fragments
        .iter()
        .map(|f| f.capacity * f.cells.len() as f64 * grid_step)
        .sum()
}

/// Reserved capacity-time minus the envelope integral, in MB·s.
pub fn waste(fragments: &[Fragment], envelope: &[f64], grid_step: Seconds) -> f64 {
    reserved(fragments, grid_step) - envelope.iter().sum::<f64>() * grid_step
}

/// Relative reservation saved by keeping `a` and `b` apart instead of one
/// merged fragment at the larger of their capacities.
pub fn split_gain(a: &Fragment, b: &Fragment) -> f64 {
    let (la, lb) = (a.cells.len() as f64, b.cells.len() as f64);
    let merged = a.capacity.max(b.capacity) * (la + lb);
    (merged - a.capacity * la - b.capacity * lb) / merged
}

pub fn segment_window(
    envelope: &[f64],
    grid_step: Seconds,
    catalog: &SliceCatalog,
    offered: Megabytes,
    seg: &SegmentationConfig,
) -> std::result::Result<Vec<Fragment>, SegmentError> {
    if !catalog.contains(offered) {
        return Err(SegmentError::NotInCatalog(offered));
    }
    let n = envelope.len();
    let (min, max) = (seg.min_cells(grid_step), seg.max_cells(grid_step));
    if n < min {
        return Err(SegmentError::WindowTooShort { cells: n, min });
    }
    let smoothed = sliding_max(envelope, seg.smoothing_radius(grid_step));
    let caps = catalog.capacities();
    let cls: Vec<usize> = smoothed.iter().map(|v| catalog.class_of(*v)).collect();
    let top = cls.iter().copied().max().expect("non-empty window");
    if top == caps.len() || caps[top] > offered {
        let peak = smoothed.iter().copied().fold(0.0, f64::max);
        return Err(SegmentError::Infeasible { peak, offered });
    }

    let mut pieces = Vec::new();
    split(
        &cls,
        caps,
        CellRange::new(0, n),
        min,
        seg.hysteresis_delta,
        &mut pieces,
    );

    let cap_of = |r: CellRange| caps[cls[r.lo..r.hi].iter().copied().max().expect("non-empty")];
    let mut frags: Vec<Fragment> = Vec::with_capacity(pieces.len());
    for r in pieces {
        if r.len() <= max {
            frags.push(Fragment {
                cells: r,
                capacity: cap_of(r),
                forced_cut_after: false,
            });
            continue;
        }
        let k = r.len().div_ceil(max);
        let (base, extra) = (r.len() / k, r.len() % k);
        if base < min {
            return Err(SegmentError::TauBounds {
                len: r.len(),
                min,
                max,
            });
        }
        let mut lo = r.lo;
        for i in 0..k {
            let hi = lo + base + usize::from(i < extra);
            let c = CellRange::new(lo, hi);
            frags.push(Fragment {
                cells: c,
                capacity: cap_of(c),
                forced_cut_after: i + 1 < k,
            });
            lo = hi;
        }
    }

    consolidate(&mut frags, &cap_of, max, seg.hysteresis_delta);
    for i in 0..frags.len().saturating_sub(1) {
        if frags[i].cells.len() + frags[i + 1].cells.len() > max {
            frags[i].forced_cut_after = true;
        }
    }
    Ok(frags)
}

/// Top-down refinement: best-gain cut at a class crossing, recursively.
fn split(
    cls: &[usize],
    caps: &[f64],
    r: CellRange,
    min: usize,
    delta: f64,
    out: &mut Vec<CellRange>,
) {
    let len = r.len();
    if len < 2 * min {
        out.push(r);
        return;
    }
    let mut prefix = Vec::with_capacity(len + 1);
    prefix.push(0usize);
    for &c in &cls[r.lo..r.hi] {
        prefix.push((*prefix.last().unwrap()).max(c));
    }
    let mut suffix = vec![0usize; len + 1];
    for i in (0..len).rev() {
        suffix[i] = suffix[i + 1].max(cls[r.lo + i]);
    }
    let parent = caps[prefix[len]] * len as f64;
    let mut best: Option<(f64, usize)> = None;
    for k in min..=len - min {
        if cls[r.lo + k - 1] == cls[r.lo + k] {
            continue;
        }
        let children = caps[prefix[k]] * k as f64 + caps[suffix[k]] * (len - k) as f64;
        let gain = (parent - children) / parent;
        if best.is_none_or(|(g, _)| gain > g) {
            best = Some((gain, k));
        }
    }
    match best {
        Some((gain, k)) if gain > 0.0 && gain >= delta => {
            split(cls, caps, CellRange::new(r.lo, r.lo + k), min, delta, out);
            split(cls, caps, CellRange::new(r.lo + k, r.hi), min, delta, out);
        }
        _ => out.push(r),
    }
}

/// Merges the least profitable unforced neighbour pair while its split gain
/// is below `delta` and the merge respects `max`.
fn consolidate(
    frags: &mut Vec<Fragment>,
    cap_of: &dyn Fn(CellRange) -> f64,
    max: usize,
    delta: f64,
) {
    loop {
        let mut worst: Option<(f64, usize)> = None;
        for i in 0..frags.len().saturating_sub(1) {
            let (a, b) = (&frags[i], &frags[i + 1]);
            if a.forced_cut_after || a.cells.len() + b.cells.len() > max {
                continue;
            }
            let gain = split_gain(a, b);
            if (gain < delta || gain <= 0.0) && worst.is_none_or(|(g, _)| gain < g) {
                worst = Some((gain, i));
            }
        }
        let Some((_, i)) = worst else { return };
        let cells = CellRange::new(frags[i].cells.lo, frags[i + 1].cells.hi);
        let forced = frags[i + 1].forced_cut_after;
        frags[i] = Fragment {
            cells,
            capacity: cap_of(cells),
            forced_cut_after: forced,
        };
        frags.remove(i + 1);
    }
}
