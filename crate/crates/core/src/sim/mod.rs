//! Running scenarios and comparing schedulers.

mod engine;
mod metrics;

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{SchedulerKind, SimConfig};
use crate::error::{Error, Result};
use crate::eventlog::EventLog;
use crate::stats::{mean, std_dev};
use crate::workload::Scenario;

pub use metrics::{JobOutcome, MetricsReport};

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub metrics: MetricsReport,
    pub log: EventLog,
}

/// Applies the run-level config to the scenario: grid check and the number
/// of historical runs kept.
fn prepare(scenario: &Scenario, config: &SimConfig) -> Result<Option<Scenario>> {
    config.validate()?;
    if let Some(g) = config.grid_step {
        if !scenario.jobs.is_empty() && (g - scenario.grid_step()).abs() > 1e-9 * g {
            return Err(Error::Config(format!(
                "sim.grid_step = {g} does not match the scenario grid step {}",
                scenario.grid_step()
            )));
        }
    }
    config
        .n_historical_runs
        .map(|n| scenario.with_historical_runs(n))
        .transpose()
}

/// Simulates one scenario under one scheduler. Deterministic in all inputs.
pub fn run(
    scenario: &Scenario,
    config: &SimConfig,
    kind: SchedulerKind,
    seed: u64,
) -> Result<RunOutput> {
    let owned = prepare(scenario, config)?;
    let sc = owned.as_ref().unwrap_or(scenario);
    let (metrics, log) = engine::Engine::new(sc, config, kind, seed)?.run()?;
    Ok(RunOutput { metrics, log })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareRow {
    pub scheduler: SchedulerKind,
    pub metric: String,
    /// Seeds on which the metric was defined.
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Half-width of the normal 95% interval of the mean.
    pub ci95: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareTable {
    pub rows: Vec<CompareRow>,
    /// Every per-seed report, ordered by scheduler then seed.
    pub runs: Vec<MetricsReport>,
}

impl CompareTable {
    pub fn get(&self, scheduler: SchedulerKind, metric: &str) -> Option<&CompareRow> {
        self.rows
            .iter()
            .find(|r| r.scheduler == scheduler && r.metric == metric)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("scheduler,metric,n,mean,sd,ci95\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.scheduler, r.metric, r.n, r.mean, r.sd, r.ci95
            );
        }
        out
    }

    /// Long-form per-seed values: `scheduler,seed,metric,value`.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("scheduler,seed,metric,value\n");
        for m in &self.runs {
            for (k, v) in m.scalars() {
                if let Some(v) = v {
                    let _ = writeln!(out, "{},{},{k},{v}", m.scheduler, m.seed);
                }
            }
        }
        out
    }

    /// Fixed-width table of means and standard deviations.
    pub fn render(&self) -> String {
        let mut schedulers: Vec<SchedulerKind> = Vec::new();
        for r in &self.rows {
            if !schedulers.contains(&r.scheduler) {
                schedulers.push(r.scheduler);
            }
        }
        let mut metrics: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !metrics.contains(&r.metric.as_str()) {
                metrics.push(&r.metric);
            }
        }
        let mut out = format!("{:<22}", "metric");
        for s in &schedulers {
            let _ = write!(out, " {:>22}", s.as_str());
        }
        out.push('\n');
        for m in metrics {
            let _ = write!(out, "{m:<22}");
            for s in &schedulers {
                match self.get(*s, m) {
                    Some(r) if r.n > 0 => {
                        let _ = write!(out, " {:>22}", format!("{:.4} ± {:.4}", r.mean, r.sd));
                    }
                    _ => {
                        let _ = write!(out, " {:>22}", "n/a");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs every scheduler on every seed. A seed fixes the scenario draws, so
/// schedulers see common random numbers. Runs execute in parallel; rows come
/// out in scheduler order, then metric order.
pub fn compare(
    scenario: &Scenario,
    schedulers: &[SchedulerKind],
    config: &SimConfig,
    seeds: &[u64],
) -> Result<CompareTable> {
    if seeds.is_empty() {
        return Err(Error::invalid("compare needs at least one seed"));
    }
    if schedulers.is_empty() {
        return Err(Error::invalid("compare needs at least one scheduler"));
    }
    let owned = prepare(scenario, config)?;
    let sc = owned.as_ref().unwrap_or(scenario);
    let plain = SimConfig {
        n_historical_runs: None,
        ..config.clone()
    };
    let pairs: Vec<(SchedulerKind, u64)> = schedulers
        .iter()
        .flat_map(|k| seeds.iter().map(move |s| (*k, *s)))
        .collect();
    let runs: Vec<MetricsReport> = pairs
        .par_iter()
        .map(|(k, s)| run(sc, &plain, *k, *s).map(|o| o.metrics))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, k) in schedulers.iter().enumerate() {
        let mine = &runs[i * seeds.len()..(i + 1) * seeds.len()];
        let names: Vec<&str> = mine[0].scalars().iter().map(|(n, _)| *n).collect();
        for (mi, name) in names.iter().enumerate() {
            let vals: Vec<f64> = mine.iter().filter_map(|m| m.scalars()[mi].1).collect();
            let n = vals.len();
            let sd = std_dev(&vals);
            rows.push(CompareRow {
                scheduler: *k,
                metric: name.to_string(),
                n,
                mean: if n > 0 { mean(&vals) } else { f64::NAN },
                sd,
                ci95: if n > 0 {
                    1.96 * sd / (n as f64).sqrt()
                } else {
                    f64::NAN
                },
            });
        }
    }
    Ok(CompareTable { rows, runs })
}
