//! Grant policies choosing one interested job per offer, the tenant token
//! ledger, and Jain's fairness index.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::Seconds;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GrantPolicy {
    #[default]
    Fifo,
    Priority,
    Edf,
    FairTokens,
}

impl FromStr for GrantPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fifo" => Ok(GrantPolicy::Fifo),
            "priority" => Ok(GrantPolicy::Priority),
            "edf" => Ok(GrantPolicy::Edf),
            "fair_tokens" => Ok(GrantPolicy::FairTokens),
            _ => Err(Error::Config(format!(
                "unknown grant policy `{s}` (fifo, priority, edf, fair_tokens)"
            ))),
        }
    }
}

impl fmt::Display for GrantPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GrantPolicy::Fifo => "fifo",
            GrantPolicy::Priority => "priority",
            GrantPolicy::Edf => "edf",
            GrantPolicy::FairTokens => "fair_tokens",
        })
    }
}

/// Token budgets for `fair_tokens`. Cost is charged in GB·min of reserved
/// capacity times `cost_rate`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TokenParams {
    pub cost_rate: f64,
    pub default_budget: f64,
    pub budgets: BTreeMap<String, f64>,
}

impl Default for TokenParams {
    fn default() -> Self {
        TokenParams {
            cost_rate: 1.0,
            default_budget: f64::INFINITY,
            budgets: BTreeMap::new(),
        }
    }
}

impl TokenParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cost_rate >= 0.0) {
            return Err(Error::Config("token cost rate must be >= 0".into()));
        }
        if !(self.default_budget >= 0.0) || self.budgets.values().any(|b| !(*b >= 0.0)) {
            return Err(Error::Config("token budgets must be >= 0".into()));
        }
        Ok(())
    }

    /// `capacity_GB * minutes * cost_rate`.
    pub fn cost(&self, capacity_mb: f64, duration: Seconds) -> f64 {
        capacity_mb / 1024.0 * duration / 60.0 * self.cost_rate
    }
}

/// Remaining tenant budgets plus debit/refund totals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TenantLedger {
    default_budget: f64,
    balances: BTreeMap<String, f64>,
    pub debited: f64,
    pub refunded: f64,
}

impl TenantLedger {
    pub fn new(params: &TokenParams) -> Self {
        TenantLedger {
            default_budget: params.default_budget,
            balances: params.budgets.clone(),
            debited: 0.0,
            refunded: 0.0,
        }
    }

    pub fn balance(&self, tenant: &str) -> f64 {
        self.balances
            .get(tenant)
            .copied()
            .unwrap_or(self.default_budget)
    }

    /// Debits `cost`; refuses (returns false) when the budget cannot cover it.
    pub fn debit(&mut self, tenant: &str, cost: f64) -> bool {
        let b = self.balance(tenant);
        if cost > b {
            return false;
        }
        self.balances.insert(tenant.to_string(), b - cost);
        self.debited += cost;
        true
    }

    pub fn refund(&mut self, tenant: &str, cost: f64) {
        let b = self.balance(tenant);
        self.balances.insert(tenant.to_string(), b + cost);
        self.refunded += cost;
    }
}

/// What a policy sees of one interested job.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate<'a> {
    pub job_id: &'a str,
    pub tenant_id: &'a str,
    pub arrival: Seconds,
    pub priority: u32,
    pub deadline: Option<Seconds>,
    /// Result of the deadline check at the offer's start, for jobs with a
    /// deadline.
    pub deadline_ok: Option<bool>,
    /// Token cost of granting this job the offer.
    pub cost: f64,
}

fn fifo(a: &Candidate<'_>, b: &Candidate<'_>) -> Ordering {
    a.arrival
        .total_cmp(&b.arrival)
        .then_with(|| a.job_id.cmp(b.job_id))
}

/// Index of the selected candidate, or `None` when the offer lapses.
pub fn select(
    policy: GrantPolicy,
    candidates: &[Candidate<'_>],
    ledger: &TenantLedger,
) -> Option<usize> {
    let idx = 0..candidates.len();
    match policy {
        GrantPolicy::Fifo => idx.min_by(|&a, &b| fifo(&candidates[a], &candidates[b])),
        GrantPolicy::Priority => idx.min_by(|&a, &b| {
            let (x, y) = (&candidates[a], &candidates[b]);
            y.priority.cmp(&x.priority).then_with(|| fifo(x, y))
        }),
        GrantPolicy::Edf => idx
            .filter(|&i| candidates[i].deadline_ok != Some(false))
            .min_by(|&a, &b| {
                let (x, y) = (&candidates[a], &candidates[b]);
                let key = |c: &Candidate<'_>| c.deadline.unwrap_or(f64::INFINITY);
                key(x).total_cmp(&key(y)).then_with(|| fifo(x, y))
            }),
        GrantPolicy::FairTokens => idx
            .filter(|&i| candidates[i].cost <= ledger.balance(candidates[i].tenant_id))
            .min_by(|&a, &b| {
                let (x, y) = (&candidates[a], &candidates[b]);
                ledger
                    .balance(y.tenant_id)
                    .total_cmp(&ledger.balance(x.tenant_id))
                    .then_with(|| fifo(x, y))
            }),
    }
}

/// `(Σx)² / (n·Σx²)`; all-zero service counts as perfectly equal.
pub fn jain_index(service: &[f64]) -> Result<f64> {
    if service.is_empty() {
        return Err(Error::invalid("Jain's index needs at least one tenant"));
    }
    if service.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("service totals must be >= 0"));
    }
    let sum: f64 = service.iter().sum();
    let sq: f64 = service.iter().map(|x| x * x).sum();
    if sq == 0.0 {
        return Ok(1.0);
    }
    Ok((sum * sum / (service.len() as f64 * sq)).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand<'a>(id: &'a str, tenant: &'a str, arrival: f64, priority: u32) -> Candidate<'a> {
        Candidate {
            job_id: id,
            tenant_id: tenant,
            arrival,
            priority,
            deadline: None,
            deadline_ok: None,
            cost: 0.0,
        }
    }

    fn unlimited() -> TenantLedger {
        TenantLedger::new(&TokenParams::default())
    }

    #[test]
    fn single_interest_wins_under_every_policy() {
        let c = [cand("a", "t", 0.0, 0)];
        for p in [
            GrantPolicy::Fifo,
            GrantPolicy::Priority,
            GrantPolicy::Edf,
            GrantPolicy::FairTokens,
        ] {
            assert_eq!(select(p, &c, &unlimited()), Some(0));
            assert_eq!(select(p, &[], &unlimited()), None);
        }
    }

    #[test]
    fn fifo_and_priority() {
        let c = [
            cand("b", "t", 5.0, 3),
            cand("a", "t", 1.0, 7),
            cand("c", "t", 1.0, 3),
        ];
        assert_eq!(select(GrantPolicy::Fifo, &c, &unlimited()), Some(1));
        assert_eq!(select(GrantPolicy::Priority, &c, &unlimited()), Some(1));
        let c = [cand("x", "t", 0.0, 3), cand("y", "t", 9.0, 7)];
        assert_eq!(select(GrantPolicy::Priority, &c, &unlimited()), Some(1));
    }

    #[test]
    fn edf_picks_earliest_admissible_deadline() {
        let mk = |id, d: f64| Candidate {
            deadline: Some(d),
            deadline_ok: Some(true),
            ..cand(id, "t", 0.0, 0)
        };
        let c = [
            mk("a", 50.0),
            mk("b", 30.0),
            mk("c", 90.0),
            cand("d", "t", -1.0, 0),
        ];
        assert_eq!(select(GrantPolicy::Edf, &c, &unlimited()), Some(1));
        let only = [Candidate {
            deadline_ok: Some(false),
            ..mk("a", 50.0)
        }];
        assert_eq!(select(GrantPolicy::Edf, &only, &unlimited()), None);
    }

    #[test]
    fn fair_tokens_example() {
        let params = TokenParams {
            cost_rate: 1.0,
            default_budget: 0.0,
            budgets: BTreeMap::from([("rich".to_string(), 10.0), ("poor".to_string(), 2.0)]),
        };
        let mut ledger = TenantLedger::new(&params);
        let c = [
            Candidate {
                cost: 5.0,
                ..cand("p", "poor", 0.0, 0)
            },
            Candidate {
                cost: 5.0,
                ..cand("r", "rich", 9.0, 0)
            },
        ];
        let i = select(GrantPolicy::FairTokens, &c, &ledger).unwrap();
        assert_eq!(c[i].tenant_id, "rich");
        assert!(ledger.debit("rich", 5.0));
        assert_eq!(ledger.balance("rich"), 5.0);
        assert!(!ledger.debit("poor", 5.0));
        ledger.refund("rich", 5.0);
        assert_eq!(ledger.balance("rich"), 10.0);
    }

    #[test]
    fn token_cost_is_gb_minutes() {
        let p = TokenParams {
            cost_rate: 0.5,
            ..TokenParams::default()
        };
        assert_eq!(p.cost(20480.0, 600.0), 20.0 * 10.0 * 0.5);
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[3.0, 3.0, 3.0]).unwrap(), 1.0);
        assert_eq!(jain_index(&[5.0, 0.0, 0.0, 0.0]).unwrap(), 0.25);
        assert!((jain_index(&[1.0, 2.0, 3.0]).unwrap() - 36.0 / 42.0).abs() < 1e-12);
        assert_eq!(jain_index(&[0.0, 0.0]).unwrap(), 1.0);
        assert!(jain_index(&[]).is_err());
    }

    proptest! {
        #[test]
        fn jain_is_bounded(xs in proptest::collection::vec(0.0f64..1e6, 1..20)) {
            let j = jain_index(&xs).unwrap();
            let n = xs.len() as f64;
            prop_assert!(j >= 1.0 / n - 1e-12 && j <= 1.0);
        }

        #[test]
        fn selection_is_scale_invariant(
            prios in proptest::collection::vec(0u32..50, 1..8),
            budgets in proptest::collection::vec(1.0f64..100.0, 1..8),
            k in 1u32..5,
            scale in 0.1f64..10.0,
        ) {
            let ids: Vec<String> = (0..prios.len()).map(|i| format!("j{i}")).collect();
            let tenants: Vec<String> = (0..budgets.len()).map(|i| format!("t{i}")).collect();
            let mk = |mult: u32| -> Vec<Candidate<'_>> {
                prios.iter().enumerate().map(|(i, p)| Candidate {
                    priority: p * mult,
                    cost: 1.0,
                    ..cand(&ids[i], &tenants[i % tenants.len()], i as f64, 0)
                }).collect()
            };
            let ledger = unlimited();
            prop_assert_eq!(select(GrantPolicy::Priority, &mk(1), &ledger), select(GrantPolicy::Priority, &mk(k), &ledger));
            let params = |s: f64| TokenParams {
                cost_rate: 1.0,
                default_budget: 0.0,
                budgets: tenants.iter().cloned().zip(budgets.iter().map(|b| b * s)).collect(),
            };
            let c: Vec<Candidate<'_>> = mk(1).into_iter().map(|c| Candidate { cost: 0.0, ..c }).collect();
            prop_assert_eq!(
                select(GrantPolicy::FairTokens, &c, &TenantLedger::new(&params(1.0))),
                select(GrantPolicy::FairTokens, &c, &TenantLedger::new(&params(scale)))
            );
        }

        #[test]
        fn ledger_conserves(ops in proptest::collection::vec((0usize..3, 0.0f64..20.0, proptest::bool::ANY), 0..40)) {
            let params = TokenParams { cost_rate: 1.0, default_budget: 50.0, budgets: BTreeMap::new() };
            let mut l = TenantLedger::new(&params);
            let mut granted: Vec<(String, f64)> = Vec::new();
            for (t, cost, refund) in ops {
                let tenant = format!("t{t}");
                if refund {
                    if let Some((tn, c)) = granted.pop() {
                        l.refund(&tn, c);
                    }
                } else if l.debit(&tenant, cost) {
                    granted.push((tenant, cost));
                }
            }
            for t in 0..3 {
                let name = format!("t{t}");
                prop_assert!(l.balance(&name) >= 0.0);
            }
            let outstanding: f64 = granted.iter().map(|(_, c)| c).sum();
            prop_assert!((l.debited - l.refunded - outstanding).abs() < 1e-9);
        }
    }
}
