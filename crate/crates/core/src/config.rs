//! Simulation configuration and its flat `section.key = value` form.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::baselines::{MigrationParams, SpeedupTable};
use crate::cluster::{ClusterLayout, SliceCatalog, DEFAULT_GPU_CAPACITY};
use crate::error::{Error, Result};
use crate::policies::{GrantPolicy, TokenParams};
use crate::profiles::{AdmissionMethod, RiskParams};
use crate::protocol::SegmentationConfig;
use crate::{Megabytes, Seconds};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Sja,
    FirstFit,
    BestFit,
    Moldable,
    Preempt,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 5] = [
        SchedulerKind::Sja,
        SchedulerKind::FirstFit,
        SchedulerKind::BestFit,
        SchedulerKind::Moldable,
        SchedulerKind::Preempt,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            SchedulerKind::Sja => "sja",
            SchedulerKind::FirstFit => "first-fit",
            SchedulerKind::BestFit => "best-fit",
            SchedulerKind::Moldable => "moldable",
            SchedulerKind::Preempt => "preempt",
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchedulerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sja" => Ok(SchedulerKind::Sja),
            "first-fit" | "first_fit" => Ok(SchedulerKind::FirstFit),
            "best-fit" | "best_fit" => Ok(SchedulerKind::BestFit),
            "moldable" => Ok(SchedulerKind::Moldable),
            "preempt" | "preempt_migrate" => Ok(SchedulerKind::Preempt),
            _ => Err(Error::Config(format!(
                "unknown scheduler `{s}` (sja, first-fit, best-fit, moldable, preempt)"
            ))),
        }
    }
}

/// GPU layout as configured: either one slice list shared by every GPU or
/// one list per GPU.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSpec {
    pub gpus: usize,
    pub slices_per_gpu: Vec<Vec<Megabytes>>,
    pub gpu_capacity: Megabytes,
    pub catalog: SliceCatalog,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            gpus: 4,
            slices_per_gpu: vec![vec![20480.0, 10240.0, 5120.0, 5120.0]],
            gpu_capacity: DEFAULT_GPU_CAPACITY,
            catalog: SliceCatalog::default(),
        }
    }
}

impl ClusterSpec {
    pub fn layout(&self) -> Result<ClusterLayout> {
        let gpus = match self.slices_per_gpu.len() {
            1 => vec![self.slices_per_gpu[0].clone(); self.gpus],
            n if n == self.gpus => self.slices_per_gpu.clone(),
            n => {
                return Err(Error::Config(format!(
                    "cluster.slices_per_gpu lists {n} GPUs but cluster.gpus = {}",
                    self.gpus
                )))
            }
        };
        let layout = ClusterLayout {
            gpus,
            gpu_capacity: self.gpu_capacity,
            catalog: self.catalog.clone(),
        };
        layout.validate()?;
        Ok(layout)
    }

    fn slices_string(&self) -> String {
        self.slices_per_gpu
            .iter()
            .map(|g| {
                g.iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            })
            .collect::<Vec<_>>()
            .join(";")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    /// Must match the scenario grid when set.
    pub grid_step: Option<Seconds>,
    pub risk: RiskParams,
    pub seg: SegmentationConfig,
    pub admission: AdmissionMethod,
    pub lookahead: Seconds,
    pub offer_ttl: Seconds,
    pub round_interval: Seconds,
    pub max_concurrent_subjobs_per_job: usize,
    pub online_correction: bool,
    pub single_run_inflation: f64,
    pub n_historical_runs: Option<usize>,
    pub policy: GrantPolicy,
    pub tokens: TokenParams,
    pub cluster: ClusterSpec,
    pub migration: MigrationParams,
    pub speedup: SpeedupTable,
    /// Injected failures per simulated hour.
    pub failure_rate: f64,
    pub max_wait: Seconds,
    pub time_cap: Seconds,
    /// Metrics window `[0, h]`; the makespan when unset.
    pub metrics_horizon: Option<Seconds>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grid_step: None,
            risk: RiskParams::default(),
            seg: SegmentationConfig::default(),
            admission: AdmissionMethod::Joint,
            lookahead: 1800.0,
            offer_ttl: 60.0,
            round_interval: 60.0,
            max_concurrent_subjobs_per_job: 1,
            online_correction: true,
            single_run_inflation: 1.10,
            n_historical_runs: None,
            policy: GrantPolicy::Fifo,
            tokens: TokenParams::default(),
            cluster: ClusterSpec::default(),
            migration: MigrationParams::default(),
            speedup: SpeedupTable::default(),
            failure_rate: 0.0,
            max_wait: f64::INFINITY,
            time_cap: 30.0 * 86400.0,
            metrics_horizon: None,
        }
    }
}

fn num(key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got `{v}`")))?;
    if x.is_nan() {
        return Err(Error::Config(format!("{key}: NaN is not allowed")));
    }
    Ok(x)
}

fn list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected on/off, got `{v}`"))),
    }
}

fn opt_num(x: Option<f64>, none: &str) -> String {
    x.map_or(none.to_string(), |v| v.to_string())
}

impl SimConfig {
    /// Sets one `section.key`; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "sim.grid_step" => {
                self.grid_step = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "sim.failure_rate" => self.failure_rate = num(key, v)?,
            "sim.max_wait" => self.max_wait = num(key, v)?,
            "sim.time_cap" => self.time_cap = num(key, v)?,
            "sim.metrics_horizon" => {
                self.metrics_horizon = if v == "makespan" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "risk.eps" => self.risk.eps = num(key, v)?,
            "risk.alpha_t" => self.risk.alpha_t = num(key, v)?,
            "seg.tau_min" => self.seg.tau_min = num(key, v)?,
            "seg.tau_max" => self.seg.tau_max = num(key, v)?,
            "seg.smoothing_window" => self.seg.smoothing_window = num(key, v)?,
            "seg.hysteresis_delta" => self.seg.hysteresis_delta = num(key, v)?,
            "sja.admission" => {
                self.admission = match v {
                    "joint" => AdmissionMethod::Joint,
                    "envelope" => AdmissionMethod::Envelope,
                    _ => {
                        return Err(Error::Config(format!(
                            "{key}: expected joint or envelope, got `{v}`"
                        )))
                    }
                }
            }
            "sja.lookahead" => self.lookahead = num(key, v)?,
            "sja.offer_ttl" => self.offer_ttl = num(key, v)?,
            "sja.round_interval" => self.round_interval = num(key, v)?,
            "sja.max_concurrent_subjobs_per_job" => {
                self.max_concurrent_subjobs_per_job = v.parse().map_err(|_| {
                    Error::Config(format!("{key}: expected a positive integer, got `{v}`"))
                })?
            }
            "sja.online_correction" => self.online_correction = flag(key, v)?,
            "sja.single_run_inflation" => self.single_run_inflation = num(key, v)?,
            "sja.n_historical_runs" => {
                self.n_historical_runs = if v == "all" {
                    None
                } else {
                    Some(v.parse().map_err(|_| {
                        Error::Config(format!("{key}: expected an integer or `all`, got `{v}`"))
                    })?)
                }
            }
            "policy.grant_policy" => self.policy = v.parse()?,
            "policy.cost_rate" => self.tokens.cost_rate = num(key, v)?,
            "policy.default_budget" => self.tokens.default_budget = num(key, v)?,
            "cluster.gpus" => {
                self.cluster.gpus = v
                    .parse()
                    .map_err(|_| Error::Config(format!("{key}: expected an integer, got `{v}`")))?
            }
            "cluster.slices_per_gpu" => {
                self.cluster.slices_per_gpu =
                    v.split(';').map(|g| list(key, g)).collect::<Result<_>>()?
            }
            "cluster.gpu_capacity" => self.cluster.gpu_capacity = num(key, v)?,
            "cluster.catalog" => self.cluster.catalog = SliceCatalog::new(list(key, v)?)?,
            "baseline.migrate_bandwidth" => self.migration.bandwidth = num(key, v)?,
            "baseline.migrate_fixed_overhead" => self.migration.fixed_overhead = num(key, v)?,
            "baseline.ckpt_interval" => self.migration.ckpt_interval = num(key, v)?,
            "baseline.speedup" => self.speedup = v.parse()?,
            _ => {
                if let Some(tenant) = key.strip_prefix("policy.budget.") {
                    if tenant.is_empty() {
                        return Err(Error::Config(
                            "policy.budget.<tenant> needs a tenant name".into(),
                        ));
                    }
                    self.tokens.budgets.insert(tenant.to_string(), num(key, v)?);
                } else {
                    return Err(Error::Config(format!("unknown configuration key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Applies a flat config file: `section.key = value` per line, `#`
    /// comments. Keys outside `sim/risk/seg/sja/policy/cluster/baseline`
    /// go to `other` when given, and are rejected otherwise.
    pub fn apply_text(
        &mut self,
        text: &str,
        mut other: Option<&mut Vec<(String, String)>>,
    ) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let l = line.trim();
            if l.is_empty() || l.starts_with('#') {
                continue;
            }
            let (k, v) = l.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{l}`", i + 1))
            })?;
            let (k, v) = (k.trim(), v.trim());
            let ours = [
                "sim.",
                "risk.",
                "seg.",
                "sja.",
                "policy.",
                "cluster.",
                "baseline.",
            ]
            .iter()
            .any(|p| k.starts_with(p));
            match (&mut other, ours) {
                (Some(o), false) => o.push((k.to_string(), v.to_string())),
                _ => self
                    .set(k, v)
                    .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?,
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        RiskParams::new(self.risk.eps, self.risk.alpha_t)
            .map_err(|e| Error::Config(e.to_string()))?;
        self.seg.validate()?;
        self.tokens.validate()?;
        self.migration.validate()?;
        self.cluster.layout()?;
        let positive = [
            ("sja.lookahead", self.lookahead),
            ("sja.offer_ttl", self.offer_ttl),
            ("sja.round_interval", self.round_interval),
            ("sim.max_wait", self.max_wait),
            ("sim.time_cap", self.time_cap),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be > 0, got {v}")));
            }
        }
        if !self.time_cap.is_finite() {
            return Err(Error::Config("sim.time_cap must be finite".into()));
        }
        if let Some(g) = self.grid_step {
            if !(g > 0.0) || !g.is_finite() {
                return Err(Error::Config(format!("sim.grid_step must be > 0, got {g}")));
            }
        }
        if let Some(h) = self.metrics_horizon {
            if !(h > 0.0) || !h.is_finite() {
                return Err(Error::Config(format!(
                    "sim.metrics_horizon must be > 0, got {h}"
                )));
            }
        }
        if !(self.failure_rate >= 0.0) || !self.failure_rate.is_finite() {
            return Err(Error::Config("sim.failure_rate must be >= 0".into()));
        }
        if self.max_concurrent_subjobs_per_job == 0 {
            return Err(Error::Config(
                "sja.max_concurrent_subjobs_per_job must be >= 1".into(),
            ));
        }
        if !(self.single_run_inflation >= 1.0) {
            return Err(Error::Config(
                "sja.single_run_inflation must be >= 1".into(),
            ));
        }
        if self.n_historical_runs == Some(0) {
            return Err(Error::Config("sja.n_historical_runs must be >= 1".into()));
        }
        Ok(())
    }

    /// Every key with its resolved value, in a fixed order. Feeding these
    /// back through [`SimConfig::set`] reproduces the configuration.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = vec![
            ("sim.grid_step".into(), opt_num(self.grid_step, "auto")),
            ("sim.failure_rate".into(), self.failure_rate.to_string()),
            ("sim.max_wait".into(), self.max_wait.to_string()),
            ("sim.time_cap".into(), self.time_cap.to_string()),
            (
                "sim.metrics_horizon".into(),
                opt_num(self.metrics_horizon, "makespan"),
            ),
            ("risk.eps".into(), self.risk.eps.to_string()),
            ("risk.alpha_t".into(), self.risk.alpha_t.to_string()),
            ("seg.tau_min".into(), self.seg.tau_min.to_string()),
            ("seg.tau_max".into(), self.seg.tau_max.to_string()),
            (
                "seg.smoothing_window".into(),
                self.seg.smoothing_window.to_string(),
            ),
            (
                "seg.hysteresis_delta".into(),
                self.seg.hysteresis_delta.to_string(),
            ),
            (
                "sja.admission".into(),
                match self.admission {
                    AdmissionMethod::Joint => "joint",
                    AdmissionMethod::Envelope => "envelope",
                }
                .into(),
            ),
            ("sja.lookahead".into(), self.lookahead.to_string()),
            ("sja.offer_ttl".into(), self.offer_ttl.to_string()),
            ("sja.round_interval".into(), self.round_interval.to_string()),
            (
                "sja.max_concurrent_subjobs_per_job".into(),
                self.max_concurrent_subjobs_per_job.to_string(),
            ),
            (
                "sja.online_correction".into(),
                if self.online_correction { "on" } else { "off" }.into(),
            ),
            (
                "sja.single_run_inflation".into(),
                self.single_run_inflation.to_string(),
            ),
            (
                "sja.n_historical_runs".into(),
                self.n_historical_runs
                    .map_or("all".into(), |n| n.to_string()),
            ),
            ("policy.grant_policy".into(), self.policy.to_string()),
            ("policy.cost_rate".into(), self.tokens.cost_rate.to_string()),
            (
                "policy.default_budget".into(),
                self.tokens.default_budget.to_string(),
            ),
        ];
        for (t, b) in &self.tokens.budgets {
            kv.push((format!("policy.budget.{t}"), b.to_string()));
        }
        kv.extend([
            ("cluster.gpus".into(), self.cluster.gpus.to_string()),
            (
                "cluster.slices_per_gpu".into(),
                self.cluster.slices_string(),
            ),
            (
                "cluster.gpu_capacity".into(),
                self.cluster.gpu_capacity.to_string(),
            ),
            (
                "cluster.catalog".into(),
                self.cluster
                    .catalog
                    .capacities()
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            ),
            (
                "baseline.migrate_bandwidth".into(),
                self.migration.bandwidth.to_string(),
            ),
            (
                "baseline.migrate_fixed_overhead".into(),
                self.migration.fixed_overhead.to_string(),
            ),
            (
                "baseline.ckpt_interval".into(),
                self.migration.ckpt_interval.to_string(),
            ),
            (
                "baseline.speedup".into(),
                self.speedup
                    .entries()
                    .iter()
                    .map(|(c, m)| format!("{c}:{m}"))
                    .collect::<Vec<_>>()
                    .join(","),
            ),
        ]);
        kv
    }

    pub fn to_text(&self) -> String {
        self.to_kv()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        SimConfig::default().validate().unwrap();
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        let mut c = SimConfig::default();
        assert!(c.set("risk.epsilon", "0.1").is_err());
        assert!(c.set("risk.eps", "abc").is_err());
        c.set("risk.eps", "1.5").unwrap();
        assert!(c.validate().is_err());
        let mut c = SimConfig::default();
        c.set("seg.tau_max", "10").unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_round_trip_through_echo() {
        let mut c = SimConfig::default();
        c.apply_text(
            "# comment\nrisk.eps = 0.1\ncluster.gpus = 2\ncluster.slices_per_gpu = 40960;20480,20480\n\
             policy.grant_policy = fair_tokens\npolicy.budget.alice = 100\nbaseline.speedup = 10240:1.5\n\
             sja.online_correction = off\nsim.metrics_horizon = 3600\n",
            None,
        )
        .unwrap();
        c.validate().unwrap();
        assert_eq!(c.cluster.layout().unwrap().gpus[1], vec![20480.0, 20480.0]);
        let mut d = SimConfig::default();
        d.apply_text(&c.to_text(), None).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.to_text(), d.to_text());
    }

    #[test]
    fn foreign_sections_can_be_collected() {
        let mut c = SimConfig::default();
        let mut other = Vec::new();
        c.apply_text("run.seed = 4\nrisk.eps = 0.2\n", Some(&mut other))
            .unwrap();
        assert_eq!(other, vec![("run.seed".to_string(), "4".to_string())]);
        assert!(c.apply_text("run.seed = 4\n", None).is_err());
    }

    #[test]
    fn scheduler_names() {
        for k in SchedulerKind::ALL {
            assert_eq!(k.as_str().parse::<SchedulerKind>().unwrap(), k);
        }
        assert!("round-robin".parse::<SchedulerKind>().is_err());
    }
}
