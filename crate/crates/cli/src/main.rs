//! `sja`: run, sweep and compare schedulers on MIG cluster scenarios.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sja_core::scenarios;
use sja_core::workload::{ingest_scenario, write_scenario};
use sja_core::{compare, run, CompareTable, Scenario, SchedulerKind, SimConfig};

/// Axes `sweep` accepts, with the config key each one sets.
const SWEEP_AXES: [(&str, &str); 6] = [
    ("eps", "risk.eps"),
    ("tau_min", "seg.tau_min"),
    ("smoothing_window", "seg.smoothing_window"),
    ("lookahead", "sja.lookahead"),
    ("hysteresis_delta", "seg.hysteresis_delta"),
    ("n_historical_runs", "sja.n_historical_runs"),
];

#[derive(Parser)]
#[command(
    name = "sja",
    version,
    about = "Offer-driven job atomization on MIG GPU clusters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one scenario under one scheduler and write its artifacts.
    Run(RunArgs),
    /// Run one scheduler over a parameter axis and a set of seeds.
    Sweep(SweepArgs),
    /// Compare two or more schedulers over a set of seeds.
    Compare(CompareArgs),
    /// Check a scenario file and its ensembles.
    Validate(ValidateArgs),
    /// Write a built-in preset out as scenario files.
    Synth(SynthArgs),
}

/// Where the scenario comes from and how the simulator is configured.
/// Precedence, lowest first: defaults, the preset's own config, `--config`,
/// `--set`, then the dedicated flags.
#[derive(Args, Clone, Default)]
struct Common {
    /// Scenario CSV file.
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    /// Built-in scenario (illustrative, priority-inversion, fragmented,
    /// calibration, edf, fairness, failures).
    #[arg(long)]
    preset: Option<String>,
    /// Seed used to draw a seeded preset (defaults to the first run seed).
    #[arg(long)]
    preset_seed: Option<u64>,
    /// Flat `section.key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` overrides, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Memory risk tolerance, in (0, 1).
    #[arg(long)]
    eps: Option<String>,
    /// Deadline risk tolerance, in (0, 1).
    #[arg(long)]
    alpha_t: Option<String>,
    /// Shortest subjob, seconds.
    #[arg(long)]
    tau_min: Option<String>,
    /// Longest subjob, seconds.
    #[arg(long)]
    tau_max: Option<String>,
    /// Sliding-max smoothing width, seconds.
    #[arg(long)]
    smoothing_window: Option<String>,
    /// Minimum relative gain for a segmentation cut, in (0, 1).
    #[arg(long)]
    hysteresis_delta: Option<String>,
    /// Gap discovery horizon, seconds.
    #[arg(long)]
    lookahead: Option<String>,
    /// Offer lifetime, seconds.
    #[arg(long)]
    offer_ttl: Option<String>,
    /// fifo, priority, edf or fair_tokens.
    #[arg(long)]
    grant_policy: Option<String>,
    /// Injected failures per hour, cluster-wide.
    #[arg(long)]
    failure_rate: Option<String>,
    /// Reject a job that has not started after this many seconds.
    #[arg(long)]
    max_wait: Option<String>,
    /// on or off.
    #[arg(long)]
    online_correction: Option<String>,
    /// Ensemble runs kept per profile, or `all`.
    #[arg(long)]
    n_historical_runs: Option<String>,
    /// Output directory; defaults to `$SJA_OUT_DIR/<command>` or `./sja-out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// sja, first-fit, best-fit, moldable or preempt.
    #[arg(long)]
    scheduler: Option<String>,
    /// Simulation seed (default 42).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    scheduler: Option<String>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// eps, tau_min, smoothing_window, lookahead, hysteresis_delta or n_historical_runs.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<String>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated scheduler names (at least two).
    #[arg(long, value_delimiter = ',')]
    schedulers: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    preset: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// A usage mistake: reported like clap's own errors, exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Fully resolved inputs of a command. `run_kv` holds the `run.*` keys of
/// the resolved-config echo.
struct Resolved {
    scenario: Scenario,
    config: SimConfig,
    run_kv: Vec<(String, String)>,
    out: PathBuf,
}

fn parse_kv(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{s}`")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn out_dir(explicit: Option<&PathBuf>, command: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.clone();
    }
    let root =
        std::env::var_os("SJA_OUT_DIR").map_or_else(|| PathBuf::from("sja-out"), PathBuf::from);
    root.join(command)
}

fn lookup<'a>(kv: &'a [(String, String)], key: &str) -> Option<&'a str> {
    kv.iter()
        .rev()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
}

/// Resolves scenario and config. `file_kv` holds the config file's `run.*`
/// keys; `first_seed` draws seeded presets when no preset seed is given.
fn resolve(
    c: &Common,
    file_kv: &[(String, String)],
    command: &str,
    first_seed: u64,
) -> Result<Resolved> {
    let scenario_path = c
        .scenario
        .clone()
        .or_else(|| lookup(file_kv, "run.scenario").map(PathBuf::from));
    let preset = c
        .preset
        .clone()
        .or_else(|| lookup(file_kv, "run.preset").map(str::to_string));
    let preset_seed = match (c.preset_seed, lookup(file_kv, "run.preset_seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v
            .parse()
            .with_context(|| format!("run.preset_seed `{v}`"))?,
        (None, None) => first_seed,
    };
    let mut run_kv = Vec::new();
    let (scenario, mut config) = match (scenario_path, preset) {
        (Some(_), Some(_)) => {
            return Err(usage("give either a scenario file or a preset, not both"))
        }
        (Some(p), None) => {
            let sc =
                ingest_scenario(&p).with_context(|| format!("loading scenario {}", p.display()))?;
            run_kv.push(("run.scenario".to_string(), p.display().to_string()));
            (sc, SimConfig::default())
        }
        (None, Some(name)) => {
            let p = scenarios::by_name(&name, preset_seed).map_err(|e| usage(e.to_string()))?;
            run_kv.push(("run.preset".to_string(), name));
            run_kv.push(("run.preset_seed".to_string(), preset_seed.to_string()));
            (p.scenario, p.config)
        }
        (None, None) => {
            return Err(usage(
                "a scenario is required: pass --scenario FILE or --preset NAME",
            ))
        }
    };
    if let Some(p) = &c.config {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        config.apply_text(&text, Some(&mut Vec::new()))?;
    }
    for s in &c.set {
        let (k, v) = parse_kv(s)?;
        config.set(&k, &v)?;
    }
    let flags = [
        ("risk.eps", &c.eps),
        ("risk.alpha_t", &c.alpha_t),
        ("seg.tau_min", &c.tau_min),
        ("seg.tau_max", &c.tau_max),
        ("seg.smoothing_window", &c.smoothing_window),
        ("seg.hysteresis_delta", &c.hysteresis_delta),
        ("sja.lookahead", &c.lookahead),
        ("sja.offer_ttl", &c.offer_ttl),
        ("policy.grant_policy", &c.grant_policy),
        ("sim.failure_rate", &c.failure_rate),
        ("sim.max_wait", &c.max_wait),
        ("sja.online_correction", &c.online_correction),
        ("sja.n_historical_runs", &c.n_historical_runs),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            config.set(k, v)?;
        }
    }
    config.validate()?;
    Ok(Resolved {
        scenario,
        config,
        run_kv,
        out: out_dir(c.out.as_ref(), command),
    })
}

fn scheduler(s: &str) -> Result<SchedulerKind> {
    s.parse::<SchedulerKind>().map_err(|e| usage(e.to_string()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn echo(r: &Resolved, extra: &[(String, String)]) -> String {
    let mut s = String::new();
    for (k, v) in r.run_kv.iter().chain(extra) {
        s.push_str(&format!("{k} = {v}\n"));
    }
    s.push_str(&r.config.to_text());
    s
}

/// The `run.*` keys of the config file. Keys outside the known sections
/// other than these are rejected.
fn file_run_keys(c: &Common) -> Result<Vec<(String, String)>> {
    let mut kv = Vec::new();
    if let Some(p) = &c.config {
        let text =
            fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        SimConfig::default()
            .apply_text(&text, Some(&mut kv))
            .with_context(|| format!("in config {}", p.display()))?;
    }
    for (k, _) in &kv {
        if !matches!(
            k.as_str(),
            "run.scenario"
                | "run.preset"
                | "run.preset_seed"
                | "run.scheduler"
                | "run.seed"
                | "run.seeds"
        ) {
            bail!("unknown configuration key `{k}`");
        }
    }
    Ok(kv)
}

fn seeds_from(flag: Option<&Vec<u64>>, file_kv: &[(String, String)]) -> Result<Vec<u64>> {
    if let Some(s) = flag {
        return Ok(s.clone());
    }
    match lookup(file_kv, "run.seeds") {
        Some(v) => v
            .split(',')
            .map(|x| {
                x.trim()
                    .parse::<u64>()
                    .with_context(|| format!("run.seeds entry `{x}`"))
            })
            .collect(),
        None => Ok((1..=5).collect()),
    }
}

fn cmd_run(a: &RunArgs) -> Result<()> {
    let file_kv = file_run_keys(&a.common)?;
    let seed = match (a.seed, lookup(&file_kv, "run.seed")) {
        (Some(s), _) => s,
        (None, Some(v)) => v.parse().with_context(|| format!("run.seed `{v}`"))?,
        (None, None) => 42,
    };
    let r = resolve(&a.common, &file_kv, "run", seed)?;
    let kind = scheduler(
        a.scheduler
            .as_deref()
            .or(lookup(&file_kv, "run.scheduler"))
            .unwrap_or("sja"),
    )?;
    let outcome = run(&r.scenario, &r.config, kind, seed)?;
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    write(&r.out, "events.jsonl", &outcome.log.to_jsonl())?;
    write(&r.out, "metrics.csv", &outcome.metrics.to_csv())?;
    write(&r.out, "jobs.csv", &outcome.metrics.per_job_csv())?;
    let summary = outcome.metrics.summary();
    write(&r.out, "summary.txt", &summary)?;
    let extra = [
        ("run.scheduler".to_string(), kind.to_string()),
        ("run.seed".to_string(), seed.to_string()),
    ];
    write(&r.out, "config.txt", &echo(&r, &extra))?;
    print!("{summary}");
    println!("artifacts in {}", r.out.display());
    Ok(())
}

fn write_table(dir: &Path, stem: &str, t: &CompareTable) -> Result<()> {
    write(dir, &format!("{stem}.csv"), &t.to_csv())?;
    write(dir, &format!("{stem}_runs.csv"), &t.runs_csv())?;
    write(dir, &format!("{stem}.txt"), &t.render())
}

fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let file_kv = file_run_keys(&a.common)?;
    let seeds = seeds_from(a.seeds.as_ref(), &file_kv)?;
    if seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    let names = a
        .schedulers
        .clone()
        .unwrap_or_else(|| SchedulerKind::ALL.iter().map(|k| k.to_string()).collect());
    let kinds: Vec<SchedulerKind> = names.iter().map(|s| scheduler(s)).collect::<Result<_>>()?;
    if kinds.len() < 2 {
        return Err(usage("compare needs at least two schedulers"));
    }
    let r = resolve(&a.common, &file_kv, "compare", seeds[0])?;
    let table = compare(&r.scenario, &kinds, &r.config, &seeds)?;
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    write_table(&r.out, "compare", &table)?;
    let seeds_s = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(",");
    let extra = [("run.seeds".to_string(), seeds_s)];
    write(&r.out, "config.txt", &echo(&r, &extra))?;
    print!("{}", table.render());
    println!("artifacts in {}", r.out.display());
    Ok(())
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let Some((_, key)) = SWEEP_AXES.iter().find(|(n, _)| *n == a.axis) else {
        let names: Vec<&str> = SWEEP_AXES.iter().map(|(n, _)| *n).collect();
        return Err(usage(format!(
            "`{}` is not a sweepable axis (one of {})",
            a.axis,
            names.join(", ")
        )));
    };
    let file_kv = file_run_keys(&a.common)?;
    let seeds = seeds_from(a.seeds.as_ref(), &file_kv)?;
    if seeds.is_empty() {
        return Err(usage("at least one seed is required"));
    }
    let kind = scheduler(
        a.scheduler
            .as_deref()
            .or(lookup(&file_kv, "run.scheduler"))
            .unwrap_or("sja"),
    )?;
    let r = resolve(&a.common, &file_kv, "sweep", seeds[0])?;
    let mut summary = String::from("axis,value,metric,n,mean,sd,ci95\n");
    let mut runs = String::from("axis,value,seed,metric,value\n");
    let mut text = String::new();
    for v in &a.values {
        let mut cfg = r.config.clone();
        cfg.set(key, v)?;
        cfg.validate()?;
        let t = compare(&r.scenario, &[kind], &cfg, &seeds)?;
        for row in &t.rows {
            summary.push_str(&format!(
                "{},{v},{},{},{},{},{}\n",
                a.axis, row.metric, row.n, row.mean, row.sd, row.ci95
            ));
        }
        for m in &t.runs {
            for (name, val) in m.scalars() {
                if let Some(val) = val {
                    runs.push_str(&format!("{},{v},{},{name},{val}\n", a.axis, m.seed));
                }
            }
        }
        text.push_str(&format!("{} = {v}\n{}\n", a.axis, t.render()));
    }
    fs::create_dir_all(&r.out).with_context(|| format!("creating {}", r.out.display()))?;
    write(&r.out, "sweep.csv", &summary)?;
    write(&r.out, "sweep_runs.csv", &runs)?;
    write(&r.out, "sweep.txt", &text)?;
    let extra = [
        ("run.scheduler".to_string(), kind.to_string()),
        (
            "run.seeds".to_string(),
            seeds
                .iter()
                .map(u64::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
    ];
    write(&r.out, "config.txt", &echo(&r, &extra))?;
    print!("{text}");
    println!(
        "{} runs ({} values x {} seeds); artifacts in {}",
        a.values.len() * seeds.len(),
        a.values.len(),
        seeds.len(),
        r.out.display()
    );
    Ok(())
}

fn cmd_validate(a: &ValidateArgs) -> Result<()> {
    let sc = ingest_scenario(&a.scenario)
        .with_context(|| format!("loading scenario {}", a.scenario.display()))?;
    let catalog_max = sja_core::SliceCatalog::default().max();
    println!(
        "{}: {} jobs, {} ensembles, grid step {} s",
        a.scenario.display(),
        sc.jobs.len(),
        sc.ensembles.len(),
        sc.grid_step()
    );
    let mut warnings = 0;
    for j in &sc.jobs {
        if j.declared_peak > catalog_max {
            println!(
                "warning: job {} declares {} MB, above the largest slice",
                j.job_id, j.declared_peak
            );
            warnings += 1;
        }
        if let Some(d) = j.deadline {
            if d < j.arrival + j.total_work {
                println!(
                    "warning: job {} cannot meet its deadline even when started on arrival",
                    j.job_id
                );
                warnings += 1;
            }
        }
    }
    for (k, e) in &sc.ensembles {
        if e.ensemble.len() == 1 {
            println!("warning: ensemble {k} has a single run; its profile is deterministic");
            warnings += 1;
        }
    }
    println!("ok ({warnings} warnings)");
    Ok(())
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let p = scenarios::by_name(&a.preset, a.seed).map_err(|e| usage(e.to_string()))?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let path = write_scenario(&a.out, &p.scenario)?;
    write(&a.out, "config.txt", &p.config.to_text())?;
    println!("wrote {} and config.txt", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Sweep(a) => cmd_sweep(a),
        Cmd::Compare(a) => cmd_compare(a),
        Cmd::Validate(a) => cmd_validate(a),
        Cmd::Synth(a) => cmd_synth(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if e.downcast_ref::<Usage>().is_some() {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
