//! The offer → interest → grant → materialize loop.
//!
//! Interest is a dry run over the job's profile; nothing about a subjob
//! exists until a grant is issued and the granted job materializes its plan.

use serde::Serialize;

use crate::cluster::{ClusterState, ExecutionWindow, Holder};
use crate::error::{Error, Result};
use crate::policies::{select, Candidate, GrantPolicy, TenantLedger, TokenParams};
use crate::workload::{
    plan_extent, plan_segments, Checkpoint, Decline, JobPlanState, PlanParams, SubJob, SubJobId,
    SubJobStatus,
};
use crate::{Megabytes, Seconds};

pub mod segment;

pub use segment::{
    reserved, segment_window, sliding_max, split_gain, waste, Fragment, SegmentError,
    SegmentationConfig,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Offer {
    pub offer_id: u64,
    pub window: ExecutionWindow,
    pub issued_at: Seconds,
    pub expires_at: Seconds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Interest,
    Decline,
    Preference,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Preferences {
    pub deadline: Option<Seconds>,
    pub checkpoint_size: Megabytes,
    pub priority: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InterestSignal {
    pub offer_id: u64,
    #[serde(skip)]
    pub job_index: usize,
    pub job_id: String,
    pub kind: SignalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preferences: Option<Preferences>,
    /// Reserved duration the job would plan for this window.
    pub planned_duration: Seconds,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<Decline>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Grant {
    pub offer_id: u64,
    #[serde(skip)]
    pub job_index: usize,
    pub job_id: String,
    pub granted_at: Seconds,
    pub expires_at: Seconds,
    /// Tokens debited for the grant.
    pub cost: f64,
    /// Deadline check at the window start, for jobs with a deadline.
    pub deadline_ok: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MaterializeRefusal {
    Expired,
    NoLongerAdmissible(Decline),
    Conflict(String),
}

impl std::fmt::Display for MaterializeRefusal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MaterializeRefusal::Expired => write!(f, "grant expired"),
            MaterializeRefusal::NoLongerAdmissible(d) => write!(f, "no longer admissible: {d}"),
            MaterializeRefusal::Conflict(m) => write!(f, "reservation conflict: {m}"),
        }
    }
}

/// A waiting job as seen by the protocol.
#[derive(Clone, Copy)]
pub struct JobView<'a> {
    pub index: usize,
    pub plan: JobPlanState<'a>,
    pub checkpoint: Option<&'a Checkpoint>,
}

/// One offer per gap, ids drawn from `next_id`.
pub fn advertise(
    gaps: &[ExecutionWindow],
    now: Seconds,
    ttl: Seconds,
    next_id: &mut u64,
) -> Result<Vec<Offer>> {
    if !(ttl > 0.0) {
        return Err(Error::invalid(format!("offer ttl must be > 0, got {ttl}")));
    }
    Ok(gaps
        .iter()
        .map(|w| {
            let offer_id = *next_id;
            *next_id += 1;
            Offer {
                offer_id,
                window: *w,
                issued_at: now,
                expires_at: now + ttl,
            }
        })
        .collect())
}

/// Dry-run evaluation of the offer by every waiting job.
pub fn collect_interest(
    offer: &Offer,
    jobs: &[JobView<'_>],
    params: &PlanParams<'_>,
) -> Vec<InterestSignal> {
    jobs.iter()
        .map(|j| {
            let spec = j.plan.job;
            let base = InterestSignal {
                offer_id: offer.offer_id,
                job_index: j.index,
                job_id: spec.job_id.clone(),
                kind: SignalKind::Decline,
                preferences: None,
                planned_duration: 0.0,
                reason: None,
            };
            match plan_extent(&j.plan, &offer.window, params) {
                Ok(ext) => InterestSignal {
                    kind: SignalKind::Interest,
                    preferences: spec.deadline.map(|d| Preferences {
                        deadline: Some(d),
                        checkpoint_size: spec.checkpoint_size,
                        priority: spec.priority,
                    }),
                    planned_duration: ext.reserved_duration(j.plan.profile.grid_step()),
                    ..base
                },
                Err(reason) => InterestSignal {
                    reason: Some(reason),
                    ..base
                },
            }
        })
        .collect()
}

/// Applies the policy to the interested jobs. Under `fair_tokens` the
/// winner's tenant is debited.
#[allow(clippy::too_many_arguments)]
pub fn grant(
    offer: &Offer,
    interests: &[InterestSignal],
    jobs: &[JobView<'_>],
    policy: GrantPolicy,
    tokens: &TokenParams,
    ledger: &mut TenantLedger,
    alpha_t: f64,
    now: Seconds,
) -> Option<Grant> {
    let view = |idx: usize| {
        jobs.iter()
            .find(|j| j.index == idx)
            .expect("interest from a listed job")
    };
    let live: Vec<&InterestSignal> = interests
        .iter()
        .filter(|s| s.offer_id == offer.offer_id && s.kind != SignalKind::Decline)
        .collect();
    let deadline_ok: Vec<Option<bool>> = live
        .iter()
        .map(|s| {
            let j = view(s.job_index);
            let spec = j.plan.job;
            spec.deadline.map(|d| {
                let start = offer.window.start.max(j.plan.not_before);
                let remaining = (spec.total_work - j.plan.progress) / spec.total_work;
                d > start
                    && j.plan
                        .profile
                        .deadline_admissible(
                            remaining.clamp(f64::MIN_POSITIVE, 1.0),
                            d - start,
                            alpha_t,
                        )
                        .is_ok_and(|a| a.admissible)
            })
        })
        .collect();
    let candidates: Vec<Candidate<'_>> = live
        .iter()
        .zip(&deadline_ok)
        .map(|(s, ok)| {
            let spec = view(s.job_index).plan.job;
            Candidate {
                job_id: &spec.job_id,
                tenant_id: &spec.tenant_id,
                arrival: spec.arrival,
                priority: spec.priority,
                deadline: spec.deadline,
                deadline_ok: *ok,
                cost: tokens.cost(offer.window.capacity, s.planned_duration),
            }
        })
        .collect();
    let i = select(policy, &candidates, ledger)?;
    let cost = if policy == GrantPolicy::FairTokens {
        let c = candidates[i].cost;
        if !ledger.debit(candidates[i].tenant_id, c) {
            return None;
        }
        c
    } else {
        0.0
    };
    Some(Grant {
        offer_id: offer.offer_id,
        job_index: live[i].job_index,
        job_id: live[i].job_id.clone(),
        granted_at: now,
        expires_at: offer.expires_at,
        cost,
        deadline_ok: deadline_ok[i],
    })
}

/// Plans for real, places reservations and creates the subjobs. The first
/// subjob resumes from the job's latest checkpoint.
pub fn materialize(
    grant: &Grant,
    offer: &Offer,
    job: &JobView<'_>,
    params: &PlanParams<'_>,
    cluster: &mut ClusterState,
    now: Seconds,
    next_subjob: &mut u64,
) -> std::result::Result<Vec<SubJob>, MaterializeRefusal> {
    if now > grant.expires_at {
        return Err(MaterializeRefusal::Expired);
    }
    let plan = plan_segments(&job.plan, &offer.window, params)
        .map_err(MaterializeRefusal::NoLongerAdmissible)?;
    let spec = job.plan.job;
    let mut placed: Vec<SubJob> = Vec::with_capacity(plan.len());
    for (k, f) in plan.iter().enumerate() {
        let id = SubJobId(*next_subjob + k as u64);
        if let Err(e) = cluster.reserve(offer.window.slice_id, f.start, f.end, Holder::Subjob(id.0))
        {
            for s in &placed {
                let _ = cluster.cancel(Holder::Subjob(s.subjob_id.0));
            }
            return Err(MaterializeRefusal::Conflict(e.to_string()));
        }
        placed.push(SubJob {
            subjob_id: id,
            parent: spec.job_id.clone(),
            parent_index: job.index,
            offer_id: offer.offer_id,
            slice_id: offer.window.slice_id,
            start: f.start,
            duration: f.end - f.start,
            slice_capacity: offer.window.capacity,
            assigned_capacity: f.assigned_capacity,
            work_from: f.work_from,
            work_to: f.work_to,
            work_segment: (f.work_from / spec.total_work, f.work_to / spec.total_work),
            resume_from: if k == 0 {
                job.checkpoint.cloned()
            } else {
                None
            },
            predicted_peak: f.predicted_peak,
            status: SubJobStatus::Planned,
        });
    }
    *next_subjob += placed.len() as u64;
    Ok(placed)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IdCounters {
    pub next_offer: u64,
    pub next_subjob: u64,
}

#[derive(Clone, Copy)]
pub struct RoundConfig<'a> {
    pub now: Seconds,
    pub lookahead: Seconds,
    pub offer_ttl: Seconds,
    pub policy: GrantPolicy,
    pub tokens: &'a TokenParams,
    pub alpha_t: f64,
    pub params: PlanParams<'a>,
}

/// Everything a round did, in order.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ProtocolEvent {
    Offer(Offer),
    Interest(InterestSignal),
    Declines {
        offer_id: u64,
        count: usize,
    },
    Grant(Grant),
    MaterializeRefused {
        offer_id: u64,
        job_id: String,
        reason: String,
    },
    OfferLapsed {
        offer_id: u64,
    },
    SubjobCreated(SubJob),
}

/// One round: gaps → offers → interest → grant → materialize, offers in
/// `(slice, start)` order. A job receives at most one grant per round.
pub fn scheduling_round(
    cluster: &mut ClusterState,
    jobs: &[JobView<'_>],
    ledger: &mut TenantLedger,
    ids: &mut IdCounters,
    cfg: &RoundConfig<'_>,
) -> Result<Vec<ProtocolEvent>> {
    let mut events = Vec::new();
    if jobs.is_empty() {
        return Ok(events);
    }
    let gaps = cluster.find_gaps(cfg.now, cfg.lookahead, cfg.params.seg.tau_min);
    let offers = advertise(&gaps, cfg.now, cfg.offer_ttl, &mut ids.next_offer)?;
    let mut granted = vec![false; jobs.len()];
    for offer in &offers {
        events.push(ProtocolEvent::Offer(*offer));
        let open: Vec<JobView<'_>> = jobs
            .iter()
            .zip(&granted)
            .filter(|(_, g)| !**g)
            .map(|(j, _)| *j)
            .collect();
        let mut signals = collect_interest(offer, &open, &cfg.params);
        let declines = signals
            .iter()
            .filter(|s| s.kind == SignalKind::Decline)
            .count();
        for s in signals.iter().filter(|s| s.kind != SignalKind::Decline) {
            events.push(ProtocolEvent::Interest(s.clone()));
        }
        if declines > 0 {
            events.push(ProtocolEvent::Declines {
                offer_id: offer.offer_id,
                count: declines,
            });
        }
        loop {
            let Some(g) = grant(
                offer,
                &signals,
                &open,
                cfg.policy,
                cfg.tokens,
                ledger,
                cfg.alpha_t,
                cfg.now,
            ) else {
                events.push(ProtocolEvent::OfferLapsed {
                    offer_id: offer.offer_id,
                });
                break;
            };
            events.push(ProtocolEvent::Grant(g.clone()));
            let view = open
                .iter()
                .find(|j| j.index == g.job_index)
                .expect("granted job is open");
            match materialize(
                &g,
                offer,
                view,
                &cfg.params,
                cluster,
                cfg.now,
                &mut ids.next_subjob,
            ) {
                Ok(subjobs) => {
                    let pos = jobs
                        .iter()
                        .position(|j| j.index == g.job_index)
                        .expect("listed");
                    granted[pos] = true;
                    events.extend(subjobs.into_iter().map(ProtocolEvent::SubjobCreated));
                    break;
                }
                Err(reason) => {
                    if g.cost > 0.0 {
                        ledger.refund(&view.plan.job.tenant_id, g.cost);
                    }
                    events.push(ProtocolEvent::MaterializeRefused {
                        offer_id: offer.offer_id,
                        job_id: g.job_id.clone(),
                        reason: reason.to_string(),
                    });
                    signals.retain(|s| s.job_index != g.job_index);
                }
            }
        }
    }
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster::{ClusterLayout, SliceCatalog, SliceId, DEFAULT_GPU_CAPACITY};
    use crate::profiles::{
        build_profile, AdmissionMethod, FunctionalProfile, RiskParams, TrajectoryEnsemble,
    };
    use crate::workload::JobSpec;

    const GB: f64 = 1024.0;
    const MIN: f64 = 60.0;

    fn spec(id: &str, arrival: f64, work_min: f64) -> JobSpec {
        JobSpec {
            job_id: id.into(),
            tenant_id: "t".into(),
            arrival,
            total_work: work_min * MIN,
            declared_peak: 20.0 * GB,
            ensemble: "e".into(),
            deadline: None,
            priority: 0,
            checkpoint_size: 100.0,
            atomizable: true,
        }
    }

    fn flat(mb: f64, cells: usize) -> FunctionalProfile {
        build_profile(
            &TrajectoryEnsemble::new(MIN, vec![vec![mb; cells]; 3]).unwrap(),
            &[0.05],
        )
        .unwrap()
    }

    fn cluster(slices: &[f64]) -> ClusterState {
        ClusterState::new(&ClusterLayout {
            gpus: vec![slices.to_vec()],
            gpu_capacity: DEFAULT_GPU_CAPACITY,
            catalog: SliceCatalog::default(),
        })
        .unwrap()
    }

    fn seg() -> SegmentationConfig {
        SegmentationConfig {
            tau_min: 5.0 * MIN,
            tau_max: 120.0 * MIN,
            smoothing_window: 0.0,
            hysteresis_delta: 0.2,
        }
    }

    fn view<'a>(index: usize, job: &'a JobSpec, profile: &'a FunctionalProfile) -> JobView<'a> {
        JobView {
            index,
            plan: JobPlanState {
                job,
                profile,
                cache: None,
                progress: 0.0,
                not_before: 0.0,
                oom_marks: &[],
            },
            checkpoint: None,
        }
    }

    fn window(cap: f64, minutes: f64) -> ExecutionWindow {
        ExecutionWindow {
            slice_id: SliceId(0),
            capacity: cap,
            start: 0.0,
            duration: minutes * MIN,
        }
    }

    #[test]
    fn advertise_passes_windows_through() {
        let mut next = 0;
        assert!(advertise(&[], 0.0, 60.0, &mut next).unwrap().is_empty());
        let gaps = [window(GB, 10.0), window(2.0 * GB, 20.0)];
        let offers = advertise(&gaps, 5.0, 60.0, &mut next).unwrap();
        assert_eq!(offers.len(), 2);
        assert_ne!(offers[0].offer_id, offers[1].offer_id);
        assert_eq!(offers[1].window, gaps[1]);
        assert_eq!(offers[0].expires_at, 65.0);
        assert!(advertise(&gaps, 0.0, 0.0, &mut next).is_err());
    }

    #[test]
    fn interest_and_decline() {
        let c = SliceCatalog::default();
        let s = seg();
        let params = PlanParams {
            catalog: &c,
            risk: RiskParams::default(),
            seg: &s,
            method: AdmissionMethod::Joint,
        };
        let offer = advertise(&[window(20.0 * GB, 10.0)], 0.0, 60.0, &mut 0).unwrap()[0];
        assert!(collect_interest(&offer, &[], &params).is_empty());

        let big = flat(25.0 * GB, 31);
        let j = spec("big", 0.0, 30.0);
        let sig = collect_interest(&offer, &[view(0, &j, &big)], &params);
        assert_eq!(sig[0].kind, SignalKind::Decline);

        // 40 GB-peak job whose first ten minutes fit under 20 GB
        let run: Vec<f64> = (0..61)
            .map(|i| if i < 10 { 16.0 * GB } else { 38.0 * GB })
            .collect();
        let train = build_profile(
            &TrajectoryEnsemble::new(MIN, vec![run; 3]).unwrap(),
            &[0.05],
        )
        .unwrap();
        let mut j = spec("train", 0.0, 60.0);
        j.deadline = Some(7200.0);
        let sig = collect_interest(&offer, &[view(0, &j, &train)], &params);
        assert_eq!(sig[0].kind, SignalKind::Interest);
        assert_eq!(sig[0].planned_duration, 10.0 * MIN);
        assert_eq!(sig[0].preferences.unwrap().deadline, Some(7200.0));

        let mut nj = spec("n", 0.0, 5.0);
        nj.atomizable = false;
        let p = flat(GB, 6);
        let sig = collect_interest(&offer, &[view(0, &nj, &p)], &params);
        assert_eq!(sig[0].reason, Some(Decline::HybridFallback));
    }

    #[test]
    fn grant_follows_edf_and_lapses_without_interest() {
        let offer = advertise(&[window(20.0 * GB, 60.0)], 0.0, 60.0, &mut 0).unwrap()[0];
        let p = flat(GB, 2);
        let jobs: Vec<JobSpec> = [150.0, 100.0, 200.0]
            .iter()
            .enumerate()
            .map(|(i, d)| JobSpec {
                deadline: Some(*d),
                ..spec(&format!("j{i}"), 0.0, 1.0)
            })
            .collect();
        let views: Vec<JobView<'_>> = jobs
            .iter()
            .enumerate()
            .map(|(i, j)| view(i, j, &p))
            .collect();
        let sig: Vec<InterestSignal> = views
            .iter()
            .map(|v| InterestSignal {
                offer_id: offer.offer_id,
                job_index: v.index,
                job_id: v.plan.job.job_id.clone(),
                kind: SignalKind::Interest,
                preferences: None,
                planned_duration: 60.0,
                reason: None,
            })
            .collect();
        let tokens = TokenParams::default();
        let mut ledger = TenantLedger::new(&tokens);
        let g = grant(
            &offer,
            &sig,
            &views,
            GrantPolicy::Edf,
            &tokens,
            &mut ledger,
            0.05,
            0.0,
        )
        .unwrap();
        assert_eq!(g.job_id, "j1");
        assert!(grant(
            &offer,
            &[],
            &views,
            GrantPolicy::Fifo,
            &tokens,
            &mut ledger,
            0.05,
            0.0
        )
        .is_none());
    }

    #[test]
    fn materialize_two_fragments_and_expiry() {
        let c = SliceCatalog::default();
        let s = seg();
        let params = PlanParams {
            catalog: &c,
            risk: RiskParams::default(),
            seg: &s,
            method: AdmissionMethod::Joint,
        };
        let run: Vec<f64> = (0..21)
            .map(|i| if i < 10 { 4.0 * GB } else { 18.0 * GB })
            .collect();
        let p = build_profile(
            &TrajectoryEnsemble::new(MIN, vec![run; 3]).unwrap(),
            &[0.05],
        )
        .unwrap();
        let j = spec("s", 0.0, 20.0);
        let ckpt = Checkpoint {
            parent: "s".into(),
            completed_fraction: 0.0,
            size: 100.0,
            created_at: 0.0,
        };
        let v = JobView {
            checkpoint: Some(&ckpt),
            ..view(0, &j, &p)
        };
        let mut cl = cluster(&[20.0 * GB]);
        let offer = advertise(&cl.find_gaps(0.0, 30.0 * MIN, 0.0), 0.0, 60.0, &mut 0).unwrap()[0];
        let g = Grant {
            offer_id: offer.offer_id,
            job_index: 0,
            job_id: "s".into(),
            granted_at: 0.0,
            expires_at: offer.expires_at,
            cost: 0.0,
            deadline_ok: None,
        };
        assert_eq!(
            materialize(&g, &offer, &v, &params, &mut cl, 61.0, &mut 0),
            Err(MaterializeRefusal::Expired)
        );
        let mut next = 0;
        let subs = materialize(&g, &offer, &v, &params, &mut cl, 0.0, &mut next).unwrap();
        assert_eq!(subs.len(), 2);
        assert_eq!(subs[0].end(), subs[1].start);
        assert_eq!(subs[0].resume_from.as_ref(), Some(&ckpt));
        assert!(subs[1].resume_from.is_none());
        assert_eq!(subs[1].work_segment, (0.5, 1.0));
        assert_eq!(next, 2);
        let gaps = cl.find_gaps(0.0, 30.0 * MIN, 0.0);
        assert_eq!((gaps[0].start, gaps[0].end()), (20.0 * MIN, 30.0 * MIN));
    }

    fn round_cfg<'a>(
        c: &'a SliceCatalog,
        s: &'a SegmentationConfig,
        t: &'a TokenParams,
    ) -> RoundConfig<'a> {
        RoundConfig {
            now: 0.0,
            lookahead: 30.0 * MIN,
            offer_ttl: 60.0,
            policy: GrantPolicy::Fifo,
            tokens: t,
            alpha_t: 0.05,
            params: PlanParams {
                catalog: c,
                risk: RiskParams::default(),
                seg: s,
                method: AdmissionMethod::Joint,
            },
        }
    }

    #[test]
    fn rounds() {
        let (c, s, t) = (SliceCatalog::default(), seg(), TokenParams::default());
        let cfg = round_cfg(&c, &s, &t);
        let mut ledger = TenantLedger::new(&t);
        let mut ids = IdCounters::default();
        let mut cl = cluster(&[20.0 * GB]);
        assert!(scheduling_round(&mut cl, &[], &mut ledger, &mut ids, &cfg)
            .unwrap()
            .is_empty());

        let p = flat(4.0 * GB, 11);
        let (a, b) = (spec("late", 9.0, 10.0), spec("early", 3.0, 10.0));
        let views = [view(0, &a, &p), view(1, &b, &p)];
        let ev = scheduling_round(&mut cl, &views, &mut ledger, &mut ids, &cfg).unwrap();
        let created: Vec<&SubJob> = ev
            .iter()
            .filter_map(|e| match e {
                ProtocolEvent::SubjobCreated(s) => Some(s),
                _ => None,
            })
            .collect();
        assert_eq!(created.len(), 1);
        assert_eq!(created[0].parent, "early");
        let grant_pos = ev
            .iter()
            .position(|e| matches!(e, ProtocolEvent::Grant(_)))
            .unwrap();
        let create_pos = ev
            .iter()
            .position(|e| matches!(e, ProtocolEvent::SubjobCreated(_)))
            .unwrap();
        assert!(grant_pos < create_pos);
    }
}
