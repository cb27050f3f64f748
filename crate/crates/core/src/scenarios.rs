//! Built-in scenarios used by the acceptance suite, the CLI and benches.
//!
//! Each preset pairs a scenario with the configuration it is meant to run
//! under. Presets that take a seed draw their ensembles and arrivals from it.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;

use crate::config::SimConfig;
use crate::error::Result;
use crate::rng;
use crate::workload::{
    synth_ensemble, EnsembleSource, Generator, JobSpec, Phase, PhaseModel, Scenario,
};
use crate::{Megabytes, Seconds};

pub const GB: Megabytes = 1024.0;

pub const NAMES: [&str; 7] = [
    "illustrative",
    "priority-inversion",
    "fragmented",
    "calibration",
    "edf",
    "fairness",
    "failures",
];

#[derive(Clone, Debug)]
pub struct Preset {
    pub scenario: Scenario,
    pub config: SimConfig,
}

/// Looks a preset up by name.
pub fn by_name(name: &str, seed: u64) -> Result<Preset> {
    match name {
        "illustrative" => illustrative(),
        "priority-inversion" => priority_inversion(),
        "fragmented" => fragmented(seed),
        "calibration" => calibration(seed),
        "edf" => edf(seed),
        "fairness" => fairness(seed),
        "failures" => failures(seed),
        _ => Err(crate::Error::Config(format!(
            "unknown preset `{name}` (one of {})",
            NAMES.join(", ")
        ))),
    }
}

struct Builder {
    g: Seconds,
    seed: u64,
    ensembles: BTreeMap<String, EnsembleSource>,
    jobs: Vec<JobSpec>,
}

impl Builder {
    fn new(g: Seconds, seed: u64) -> Self {
        Builder {
            g,
            seed,
            ensembles: BTreeMap::new(),
            jobs: Vec::new(),
        }
    }

    fn ensemble(&mut self, key: &str, phases: Vec<Phase>, runs: usize, jitter: f64) -> Result<()> {
        let model = PhaseModel::new(phases)?;
        let s = rng::sub_seed(self.seed, rng::label_hash(&format!("ensemble:{key}")));
        let ens = synth_ensemble(&model, runs, jitter, self.g, s)?;
        self.ensembles.insert(
            key.to_string(),
            EnsembleSource {
                ensemble: Arc::new(ens),
                generator: Some(Generator {
                    model,
                    duration_jitter: jitter,
                }),
            },
        );
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn job(
        &mut self,
        id: &str,
        tenant: &str,
        arrival: Seconds,
        work: Seconds,
        peak: Megabytes,
        ensemble: &str,
        atomizable: bool,
    ) -> &mut JobSpec {
        self.jobs.push(JobSpec {
            job_id: id.to_string(),
            tenant_id: tenant.to_string(),
            arrival,
            total_work: work,
            declared_peak: peak,
            ensemble: ensemble.to_string(),
            deadline: None,
            priority: 0,
            checkpoint_size: 1024.0,
            atomizable,
        });
        self.jobs.last_mut().expect("just pushed")
    }

    fn build(self) -> Result<Scenario> {
        Scenario::new(self.jobs, self.ensembles, BTreeMap::new())
    }
}

fn config(f: impl FnOnce(&mut SimConfig) -> Result<()>) -> Result<SimConfig> {
    let mut c = SimConfig::default();
    f(&mut c)?;
    c.validate()?;
    Ok(c)
}

/// A 40 GB-peak training job waits while the large slices are busy; a 20 GB
/// slice is idle for ten minutes before another job claims it. The training
/// job's first ten minutes stay below 20 GB.
pub fn illustrative() -> Result<Preset> {
    let mut b = Builder::new(10.0, 7);
    b.ensemble(
        "train",
        vec![
            Phase::steady(600.0, 12.0 * GB, 300.0),
            Phase::steady(3000.0, 35.0 * GB, 600.0),
        ],
        50,
        0.0,
    )?;
    b.ensemble(
        "bg-large",
        vec![Phase::steady(3600.0, 34.0 * GB, 300.0)],
        50,
        0.0,
    )?;
    b.ensemble(
        "bg-mid",
        vec![Phase::steady(3600.0, 16.0 * GB, 300.0)],
        50,
        0.0,
    )?;
    b.job("bg-large", "ops", 0.0, 3600.0, 36.0 * GB, "bg-large", false);
    b.job("bg-mid", "ops", 0.0, 3600.0, 18.0 * GB, "bg-mid", false);
    b.job("bg-late", "ops", 600.0, 3000.0, 18.0 * GB, "bg-mid", false);
    b.job("train", "ml", 0.0, 3600.0, 40.0 * GB, "train", true);
    let config = config(|c| {
        c.set("cluster.gpus", "2")?;
        c.set("cluster.slices_per_gpu", "40960;20480,20480")
    })?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// A long low-priority job holds the only slice that fits a later
/// high-priority job.
pub fn priority_inversion() -> Result<Preset> {
    let mut b = Builder::new(10.0, 11);
    b.ensemble(
        "big",
        vec![Phase::steady(3600.0, 28.0 * GB, 400.0)],
        50,
        0.0,
    )?;
    b.ensemble(
        "small",
        vec![Phase::steady(1800.0, 3.0 * GB, 100.0)],
        50,
        0.0,
    )?;
    b.job("low", "a", 0.0, 3600.0, 30.0 * GB, "big", true);
    b.job("filler", "a", 0.0, 1800.0, 4.0 * GB, "small", true);
    b.job("high", "b", 600.0, 1200.0, 30.0 * GB, "big", true)
        .priority = 10;
    let config = config(|c| {
        c.set("cluster.gpus", "1")?;
        c.set("cluster.slices_per_gpu", "40960")?;
        c.set("policy.grant_policy", "priority")
    })?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// Four job classes from 5 to 40 GB peaks, several of them with a
/// low-memory first phase, arriving in bursts on four heterogeneous GPUs.
pub fn fragmented(seed: u64) -> Result<Preset> {
    let mut b = Builder::new(10.0, seed);
    b.ensemble(
        "small",
        vec![Phase::steady(1800.0, 3.8 * GB, 150.0)],
        100,
        0.1,
    )?;
    b.ensemble(
        "medium",
        vec![
            Phase::warmup(300.0, 8.0 * GB, 150.0),
            Phase::steady(2100.0, 8.0 * GB, 200.0),
        ],
        100,
        0.1,
    )?;
    b.ensemble(
        "phased",
        vec![
            Phase::steady(1200.0, 4.0 * GB, 150.0),
            Phase::steady(1800.0, 17.0 * GB, 300.0),
        ],
        100,
        0.1,
    )?;
    b.ensemble(
        "large",
        vec![
            Phase::steady(900.0, 8.0 * GB, 200.0),
            Phase::steady(900.0, 16.0 * GB, 300.0),
            Phase::burst(1800.0, 34.0 * GB, 400.0, 3.0 * GB, 0.01),
        ],
        100,
        0.1,
    )?;
    let classes: [(&str, Seconds, Megabytes); 4] = [
        ("small", 1800.0, 5.0 * GB),
        ("medium", 2400.0, 10.0 * GB),
        ("phased", 3000.0, 20.0 * GB),
        ("large", 3600.0, 40.0 * GB),
    ];
    let mut r = rng::stream(seed, rng::label_hash("fragmented:arrivals"));
    let mut n = 0;
    for burst in 0..4 {
        let t0 = burst as f64 * 2400.0;
        for _ in 0..10 {
            let (class, work, peak) = classes[r.random_range(0..classes.len())];
            let arrival = t0 + r.random_range(0.0..120.0_f64).floor();
            let tenant = if n % 2 == 0 { "a" } else { "b" };
            b.job(
                &format!("j{n:03}"),
                tenant,
                arrival,
                work,
                peak,
                class,
                true,
            );
            n += 1;
        }
    }
    let config = config(|c| {
        c.set("cluster.gpus", "4")?;
        c.set(
            "cluster.slices_per_gpu",
            "40960;20480,20480;20480,10240,5120,5120;10240,10240,10240,5120,5120",
        )
    })?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// Fifty jobs whose memory has rare bursts, drawn from the same model as
/// their 200-run ensembles. On 10 GB slices the joint rule binds, so many
/// subjobs run right at the risk limit.
pub fn calibration(seed: u64) -> Result<Preset> {
    let mut b = Builder::new(5.0, seed);
    b.ensemble(
        "bursty",
        vec![Phase::burst(3600.0, 6.0 * GB, 300.0, 6.0 * GB, 0.0005)],
        200,
        0.0,
    )?;
    b.ensemble(
        "ramp",
        vec![
            Phase::steady(1200.0, 3.0 * GB, 200.0),
            Phase::burst(2400.0, 7.5 * GB, 500.0, 3.0 * GB, 0.001),
        ],
        200,
        0.0,
    )?;
    let mut r = rng::stream(seed, rng::label_hash("calibration:jobs"));
    for n in 0..50 {
        let ens = if n % 3 == 2 { "ramp" } else { "bursty" };
        let arrival = r.random_range(0.0..7200.0_f64).floor();
        b.job(
            &format!("c{n:03}"),
            "t",
            arrival,
            3600.0,
            20.0 * GB,
            ens,
            true,
        );
    }
    let config = config(|c| c.set("risk.eps", "0.05"))?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// One hundred deadline jobs whose true length varies like their
/// ensembles' runtimes, on an amply sized cluster under EDF.
pub fn edf(seed: u64) -> Result<Preset> {
    let mut b = Builder::new(10.0, seed);
    let jitter = 0.25;
    b.ensemble(
        "job",
        vec![Phase::steady(2400.0, 12.0 * GB, 400.0)],
        200,
        jitter,
    )?;
    let mut r = rng::stream(seed, rng::label_hash("edf:jobs"));
    for n in 0..100 {
        let arrival = r.random_range(0.0..28800.0_f64).floor();
        let work = 2400.0 * (1.0 + r.random_range(-jitter..=jitter));
        let slack = r.random_range(1.0..2.0);
        let j = b.job(
            &format!("d{n:03}"),
            "t",
            arrival,
            work,
            14.0 * GB,
            "job",
            true,
        );
        j.deadline = Some((arrival + slack * 2400.0).floor());
    }
    let config = config(|c| {
        c.set("cluster.gpus", "8")?;
        c.set("cluster.slices_per_gpu", "20480,20480")?;
        c.set("risk.alpha_t", "0.05")?;
        c.set("sja.lookahead", "14400")?;
        c.set("policy.grant_policy", "edf")
    })?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// Two tenants with identical demand and equal budgets competing for a
/// small cluster for over four hours.
pub fn fairness(seed: u64) -> Result<Preset> {
    let mut b = Builder::new(10.0, seed);
    b.ensemble(
        "job",
        vec![
            Phase::steady(600.0, 4.0 * GB, 200.0),
            Phase::steady(1800.0, 9.0 * GB, 300.0),
        ],
        100,
        0.1,
    )?;
    let mut r = rng::stream(seed, rng::label_hash("fairness:jobs"));
    for n in 0..80 {
        let tenant = if n % 2 == 0 { "alpha" } else { "beta" };
        let arrival = r.random_range(0.0..10800.0_f64).floor();
        b.job(
            &format!("f{n:03}"),
            tenant,
            arrival,
            2400.0,
            10.0 * GB,
            "job",
            true,
        );
    }
    let config = config(|c| {
        c.set("cluster.gpus", "2")?;
        c.set("policy.grant_policy", "fair_tokens")?;
        c.set("policy.cost_rate", "1")?;
        c.set("policy.budget.alpha", "2000000")?;
        c.set("policy.budget.beta", "2000000")?;
        c.set("sim.metrics_horizon", "14400")
    })?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

/// Twenty atomizable jobs with injected failures at two per hour.
pub fn failures(seed: u64) -> Result<Preset> {
    let mut b = Builder::new(10.0, seed);
    b.ensemble(
        "job",
        vec![Phase::steady(3600.0, 7.0 * GB, 300.0)],
        100,
        0.0,
    )?;
    let mut r = rng::stream(seed, rng::label_hash("failures:jobs"));
    for n in 0..20 {
        let arrival = r.random_range(0.0..3600.0_f64).floor();
        b.job(
            &format!("x{n:03}"),
            "t",
            arrival,
            3600.0,
            8.0 * GB,
            "job",
            true,
        );
    }
    let config = config(|c| c.set("sim.failure_rate", "2"))?;
    Ok(Preset {
        scenario: b.build()?,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for name in NAMES {
            let p = by_name(name, 1).unwrap();
            assert!(!p.scenario.jobs.is_empty(), "{name}");
            p.config.validate().unwrap();
        }
        assert!(by_name("nope", 1).is_err());
    }

    #[test]
    fn seeded_presets_are_reproducible() {
        let a = fragmented(3).unwrap();
        let b = fragmented(3).unwrap();
        assert_eq!(a.scenario.jobs, b.scenario.jobs);
    }
}
