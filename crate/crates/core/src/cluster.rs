//! MIG-partitioned GPUs with per-slice reservation timelines.
//!
//! The partition layout is fixed when the cluster is built. Each slice keeps
//! a time-ordered list of non-overlapping reservations; open-ended
//! reservations (end = +inf) model monolithic jobs that hold a slice until
//! they finish.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::{Megabytes, Seconds};

pub const MAX_SLICES_PER_GPU: usize = 7;
pub const DEFAULT_GPU_CAPACITY: Megabytes = 40960.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SliceId(pub u32);

impl fmt::Display for SliceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Available slice capacities, strictly ascending.
#[derive(Clone, Debug, PartialEq)]
pub struct SliceCatalog {
    capacities: Vec<Megabytes>,
}

impl SliceCatalog {
    pub fn new(capacities: Vec<Megabytes>) -> Result<Self> {
        if capacities.is_empty() {
            return Err(Error::invalid("slice catalog is empty"));
        }
        if capacities.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::invalid(
                "slice capacities must be positive and finite",
            ));
        }
        if capacities.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid(format!(
                "slice catalog must be strictly ascending: {capacities:?}"
            )));
        }
        Ok(SliceCatalog { capacities })
    }

    pub fn capacities(&self) -> &[Megabytes] {
        &self.capacities
    }

    pub fn contains(&self, capacity: Megabytes) -> bool {
        self.capacities.contains(&capacity)
    }

    pub fn max(&self) -> Megabytes {
        *self.capacities.last().expect("non-empty")
    }

    /// Smallest capacity `>= demand`.
    pub fn smallest_covering(&self, demand: Megabytes) -> Option<Megabytes> {
        self.capacities.iter().copied().find(|c| *c >= demand)
    }

    /// Index of the smallest covering capacity; `len()` when none covers.
    pub fn class_of(&self, demand: Megabytes) -> usize {
        self.capacities.partition_point(|c| *c < demand)
    }
}

impl Default for SliceCatalog {
    fn default() -> Self {
        SliceCatalog {
            capacities: vec![5120.0, 10240.0, 20480.0, 40960.0],
        }
    }
}

/// Who holds a reservation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Holder {
    Subjob(u64),
    /// A monolithic placement of the job with this index.
    Job(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reservation {
    pub start: Seconds,
    pub end: Seconds,
    pub holder: Holder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SliceInstance {
    pub slice_id: SliceId,
    pub gpu: u32,
    pub capacity: Megabytes,
    reservations: Vec<Reservation>,
}

impl SliceInstance {
    pub fn reservations(&self) -> &[Reservation] {
        &self.reservations
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpuNode {
    pub node_id: u32,
    pub slices: Vec<SliceId>,
}

/// An advertised gap: a free interval on one slice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExecutionWindow {
    pub slice_id: SliceId,
    pub capacity: Megabytes,
    pub start: Seconds,
    pub duration: Seconds,
}

impl ExecutionWindow {
    pub fn end(&self) -> Seconds {
        self.start + self.duration
    }
}

/// Cluster layout: one capacity sequence per GPU.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterLayout {
    pub gpus: Vec<Vec<Megabytes>>,
    pub gpu_capacity: Megabytes,
    pub catalog: SliceCatalog,
}

impl ClusterLayout {
    pub fn uniform(gpus: usize, slices: &[Megabytes]) -> Self {
        ClusterLayout {
            gpus: vec![slices.to_vec(); gpus],
            gpu_capacity: DEFAULT_GPU_CAPACITY,
            catalog: SliceCatalog::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.gpus.is_empty() {
            return Err(Error::Config("cluster has no GPUs".into()));
        }
        for (g, slices) in self.gpus.iter().enumerate() {
            if slices.is_empty() {
                return Err(Error::Config(format!("GPU {g} has no slices")));
            }
            if slices.len() > MAX_SLICES_PER_GPU {
                return Err(Error::Config(format!(
                    "GPU {g} has {} slices; at most {MAX_SLICES_PER_GPU} are allowed",
                    slices.len()
                )));
            }
            let total: f64 = slices.iter().sum();
            if total > self.gpu_capacity {
                return Err(Error::Config(format!(
                    "GPU {g} slices sum to {total} MB, above the GPU capacity {} MB",
                    self.gpu_capacity
                )));
            }
            if let Some(c) = slices.iter().find(|c| !self.catalog.contains(**c)) {
                return Err(Error::Config(format!(
                    "GPU {g} slice capacity {c} is not in the catalog"
                )));
            }
        }
        Ok(())
    }
}

impl Default for ClusterLayout {
    fn default() -> Self {
        ClusterLayout::uniform(4, &[20480.0, 10240.0, 5120.0, 5120.0])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    gpus: Vec<GpuNode>,
    slices: Vec<SliceInstance>,
    catalog: SliceCatalog,
}

impl ClusterState {
    pub fn new(layout: &ClusterLayout) -> Result<Self> {
        layout.validate()?;
        let mut gpus = Vec::new();
        let mut slices = Vec::new();
        for (g, caps) in layout.gpus.iter().enumerate() {
            let mut ids = Vec::new();
            for &capacity in caps {
                let slice_id = SliceId(slices.len() as u32);
                ids.push(slice_id);
                slices.push(SliceInstance {
                    slice_id,
                    gpu: g as u32,
                    capacity,
                    reservations: Vec::new(),
                });
            }
            gpus.push(GpuNode {
                node_id: g as u32,
                slices: ids,
            });
        }
        Ok(ClusterState {
            gpus,
            slices,
            catalog: layout.catalog.clone(),
        })
    }

    pub fn catalog(&self) -> &SliceCatalog {
        &self.catalog
    }

    pub fn gpus(&self) -> &[GpuNode] {
        &self.gpus
    }

    pub fn slices(&self) -> &[SliceInstance] {
        &self.slices
    }

    pub fn slice(&self, id: SliceId) -> &SliceInstance {
        &self.slices[id.0 as usize]
    }

    pub fn total_capacity(&self) -> Megabytes {
        self.slices.iter().map(|s| s.capacity).sum()
    }

    pub fn max_slice_capacity(&self) -> Megabytes {
        self.slices.iter().map(|s| s.capacity).fold(0.0, f64::max)
    }

    /// Free intervals within `[now, now + horizon)`, one window per maximal
    /// gap, ordered by `(slice_id, start)`. Gaps shorter than `min_duration`
    /// are not reported.
    pub fn find_gaps(
        &self,
        now: Seconds,
        horizon: Seconds,
        min_duration: Seconds,
    ) -> Vec<ExecutionWindow> {
        let limit = now + horizon;
        let mut out = Vec::new();
        for s in &self.slices {
            let mut cursor = now;
            for r in &s.reservations {
                if r.end <= cursor {
                    continue;
                }
                if r.start >= limit {
                    break;
                }
                if r.start > cursor {
                    push_gap(&mut out, s, cursor, r.start, min_duration);
                }
                cursor = cursor.max(r.end);
                if cursor >= limit {
                    break;
                }
            }
            if cursor < limit {
                push_gap(&mut out, s, cursor, limit, min_duration);
            }
        }
        out
    }

    pub fn reserve(
        &mut self,
        slice: SliceId,
        start: Seconds,
        end: Seconds,
        holder: Holder,
    ) -> Result<()> {
        if !(end > start) {
            return Err(Error::invalid(format!(
                "empty reservation [{start}, {end})"
            )));
        }
        let s = self
            .slices
            .get_mut(slice.0 as usize)
            .ok_or_else(|| Error::NotFound(format!("slice {slice}")))?;
        if s.reservations
            .iter()
            .any(|r| r.start < end && start < r.end)
        {
            return Err(Error::Conflict {
                slice: slice.0,
                start,
                end,
            });
        }
        let at = s.reservations.partition_point(|r| r.start < start);
        s.reservations
            .insert(at, Reservation { start, end, holder });
        Ok(())
    }

    /// Truncates the holder's reservation to end at `actual_end`. Truncating
    /// at or before its start removes it.
    pub fn release_tail(&mut self, holder: Holder, actual_end: Seconds) -> Result<()> {
        let (si, ri) = self
            .find(holder)
            .ok_or_else(|| Error::NotFound(format!("no reservation held by {holder:?}")))?;
        let r = &mut self.slices[si].reservations[ri];
        if actual_end > r.end {
            return Err(Error::invalid(format!(
                "reservation of {holder:?} already ended at {} (asked to end at {actual_end})",
                r.end
            )));
        }
        if actual_end <= r.start {
            self.slices[si].reservations.remove(ri);
        } else {
            r.end = actual_end;
        }
        Ok(())
    }

    /// Removes the holder's reservation entirely.
    pub fn cancel(&mut self, holder: Holder) -> Result<Reservation> {
        let (si, ri) = self
            .find(holder)
            .ok_or_else(|| Error::NotFound(format!("no reservation held by {holder:?}")))?;
        Ok(self.slices[si].reservations.remove(ri))
    }

    pub fn reservation_of(&self, holder: Holder) -> Option<(SliceId, Reservation)> {
        self.find(holder)
            .map(|(si, ri)| (self.slices[si].slice_id, self.slices[si].reservations[ri]))
    }

    /// True when nothing is reserved on the slice at or after `t`.
    pub fn is_free_from(&self, slice: SliceId, t: Seconds) -> bool {
        self.slice(slice).reservations.iter().all(|r| r.end <= t)
    }

    /// Drops reservations that ended at or before `t`.
    pub fn prune(&mut self, t: Seconds) {
        for s in &mut self.slices {
            s.reservations.retain(|r| r.end > t);
        }
    }

    fn find(&self, holder: Holder) -> Option<(usize, usize)> {
        self.slices.iter().enumerate().find_map(|(si, s)| {
            s.reservations
                .iter()
                .position(|r| r.holder == holder)
                .map(|ri| (si, ri))
        })
    }
}

fn push_gap(
    out: &mut Vec<ExecutionWindow>,
    s: &SliceInstance,
    start: Seconds,
    end: Seconds,
    min_duration: Seconds,
) {
    let duration = end - start;
    if duration > 0.0 && duration >= min_duration {
        out.push(ExecutionWindow {
            slice_id: s.slice_id,
            capacity: s.capacity,
            start,
            duration,
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MIN: f64 = 60.0;

    fn one_slice(cap: f64) -> ClusterState {
        ClusterState::new(&ClusterLayout {
            gpus: vec![vec![cap]],
            gpu_capacity: DEFAULT_GPU_CAPACITY,
            catalog: SliceCatalog::default(),
        })
        .unwrap()
    }

    #[test]
    fn catalog_validation_and_lookup() {
        assert!(SliceCatalog::new(vec![10.0, 5.0]).is_err());
        assert!(SliceCatalog::new(vec![5.0, 5.0]).is_err());
        assert!(SliceCatalog::new(vec![]).is_err());
        let c = SliceCatalog::default();
        assert_eq!(c.smallest_covering(4000.0), Some(5120.0));
        assert_eq!(c.smallest_covering(5120.0), Some(5120.0));
        assert_eq!(c.smallest_covering(50000.0), None);
        assert_eq!(c.class_of(18000.0), 2);
        assert_eq!(c.class_of(50000.0), 4);
    }

    #[test]
    fn layout_validation() {
        assert!(ClusterLayout::uniform(1, &[5120.0; 8]).validate().is_err());
        assert!(ClusterLayout::uniform(1, &[40960.0, 5120.0])
            .validate()
            .is_err());
        assert!(ClusterLayout::uniform(1, &[6000.0]).validate().is_err());
        assert!(ClusterLayout::uniform(2, &[5120.0; 7]).validate().is_ok());
    }

    #[test]
    fn idle_slice_is_one_window() {
        let c = one_slice(20480.0);
        let gaps = c.find_gaps(0.0, 60.0 * MIN, 0.0);
        assert_eq!(
            gaps,
            vec![ExecutionWindow {
                slice_id: SliceId(0),
                capacity: 20480.0,
                start: 0.0,
                duration: 3600.0
            }]
        );
    }

    #[test]
    fn gaps_between_reservations() {
        let mut c = one_slice(20480.0);
        c.reserve(SliceId(0), 0.0, 10.0 * MIN, Holder::Subjob(1))
            .unwrap();
        c.reserve(SliceId(0), 25.0 * MIN, 40.0 * MIN, Holder::Subjob(2))
            .unwrap();
        let gaps: Vec<(f64, f64)> = c
            .find_gaps(0.0, 60.0 * MIN, 0.0)
            .iter()
            .map(|w| (w.start / MIN, w.end() / MIN))
            .collect();
        assert_eq!(gaps, vec![(10.0, 25.0), (40.0, 60.0)]);
        // the 15-minute gap survives a 15-minute floor, a 16-minute floor drops it
        assert_eq!(c.find_gaps(0.0, 60.0 * MIN, 15.0 * MIN).len(), 2);
        assert_eq!(c.find_gaps(0.0, 60.0 * MIN, 16.0 * MIN).len(), 1);
    }

    #[test]
    fn fully_reserved_slice_has_no_windows() {
        let mut c = one_slice(10240.0);
        c.reserve(SliceId(0), 0.0, f64::INFINITY, Holder::Job(0))
            .unwrap();
        assert!(c.find_gaps(0.0, 3600.0, 0.0).is_empty());
    }

    #[test]
    fn reserve_then_gaps_exclude_it() {
        let mut c = one_slice(20480.0);
        c.reserve(SliceId(0), 0.0, 10.0 * MIN, Holder::Subjob(1))
            .unwrap();
        c.reserve(SliceId(0), 25.0 * MIN, 40.0 * MIN, Holder::Subjob(2))
            .unwrap();
        c.reserve(SliceId(0), 10.0 * MIN, 15.0 * MIN, Holder::Subjob(3))
            .unwrap();
        let gaps: Vec<(f64, f64)> = c
            .find_gaps(0.0, 40.0 * MIN, 0.0)
            .iter()
            .map(|w| (w.start / MIN, w.end() / MIN))
            .collect();
        assert_eq!(gaps, vec![(15.0, 25.0)]);
        let err = c
            .reserve(SliceId(0), 10.0 * MIN, 15.0 * MIN, Holder::Subjob(4))
            .unwrap_err();
        assert!(matches!(err, Error::Conflict { .. }));
    }

    #[test]
    fn release_tail_examples() {
        let mut c = one_slice(20480.0);
        c.reserve(SliceId(0), 0.0, 20.0 * MIN, Holder::Subjob(7))
            .unwrap();
        c.release_tail(Holder::Subjob(7), 20.0 * MIN).unwrap();
        assert_eq!(
            c.reservation_of(Holder::Subjob(7)).unwrap().1.end,
            20.0 * MIN
        );
        c.release_tail(Holder::Subjob(7), 12.0 * MIN).unwrap();
        let gaps = c.find_gaps(0.0, 20.0 * MIN, 0.0);
        assert_eq!(gaps.len(), 1);
        assert_eq!((gaps[0].start, gaps[0].end()), (12.0 * MIN, 20.0 * MIN));
        assert!(c.release_tail(Holder::Subjob(7), 15.0 * MIN).is_err());
        assert!(matches!(
            c.release_tail(Holder::Subjob(99), 1.0),
            Err(Error::NotFound(_))
        ));
    }

    proptest! {
        /// Gaps and reservations tile the lookahead interval exactly.
        #[test]
        fn gaps_and_reservations_partition_the_horizon(
            cuts in proptest::collection::vec(0u32..200, 0..12),
            now in 0u32..100,
            horizon in 1u32..150,
        ) {
            let mut c = one_slice(5120.0);
            let mut pts: Vec<u32> = cuts;
            pts.sort_unstable();
            pts.dedup();
            for (k, pair) in pts.chunks(2).enumerate() {
                if let [a, b] = pair {
                    c.reserve(SliceId(0), f64::from(*a), f64::from(*b), Holder::Subjob(k as u64)).unwrap();
                }
            }
            let (now, horizon) = (f64::from(now), f64::from(horizon));
            let end = now + horizon;
            let mut pieces: Vec<(f64, f64, bool)> = c
                .find_gaps(now, horizon, 0.0)
                .iter()
                .map(|w| (w.start, w.end(), true))
                .collect();
            for r in c.slice(SliceId(0)).reservations() {
                let (a, b) = (r.start.max(now), r.end.min(end));
                if b > a {
                    pieces.push((a, b, false));
                }
            }
            pieces.sort_by(|x, y| x.0.total_cmp(&y.0));
            let mut cursor = now;
            for (a, b, _) in &pieces {
                prop_assert_eq!(*a, cursor);
                cursor = *b;
            }
            prop_assert_eq!(cursor, end);
            // maximal gaps: never two gap pieces back to back
            for w in pieces.windows(2) {
                prop_assert!(!(w[0].2 && w[1].2));
            }
        }
    }
}
