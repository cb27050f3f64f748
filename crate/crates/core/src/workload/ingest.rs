//! Scenario and ensemble-manifest files.
//!
//! Scenario file, one job per line after a header:
//!
//! ```text
//! job_id,tenant,arrival_s,total_work_s,declared_peak_mb,priority,deadline_s|none,ckpt_mb,atomizable,ensemble_manifest_path[,ground_truth_path]
//! ```
//!
//! Ensemble manifest, one run file per line; `key = value` lines carry the
//! grid step and, optionally, the generator the runs were drawn from:
//!
//! ```text
//! grid_step_s = 5
//! duration_jitter = 0.1
//! phase = warmup,120,8000,50,0,0
//! phase = burst,3480,8000,200,4000,0.01
//! runs/run_0000.csv
//! ```
//!
//! Relative paths resolve against the directory of the file naming them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::{EnsembleSource, Generator, JobSpec, Phase, PhaseKind, PhaseModel, Scenario};
use crate::error::{Error, Result};
use crate::profiles::TrajectoryEnsemble;
use crate::trajectory::{fmt6, Trajectory};

const HEADER: &str =
    "job_id,tenant,arrival_s,total_work_s,declared_peak_mb,priority,deadline_s,ckpt_mb,atomizable,ensemble_manifest_path";

fn perr(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    let p = Path::new(rel);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or(Path::new(".")).join(p)
    }
}

/// Loads an ensemble manifest and every run it lists.
pub fn load_manifest(path: &Path) -> Result<EnsembleSource> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut grid_step = None;
    let mut jitter = 0.0;
    let mut phases = Vec::new();
    let mut run_paths = Vec::new();
    for (line, l) in content_lines(&text) {
        if let Some((key, value)) = l.split_once('=') {
            let (key, value) = (key.trim(), value.trim());
            match key {
                "grid_step_s" => {
                    let g: f64 = value
                        .parse()
                        .map_err(|_| perr(path, line, format!("bad grid step `{value}`")))?;
                    if !(g > 0.0) {
                        return Err(perr(path, line, "grid step must be > 0"));
                    }
                    grid_step = Some(g);
                }
                "duration_jitter" => {
                    jitter = value
                        .parse()
                        .map_err(|_| perr(path, line, format!("bad jitter `{value}`")))?;
                    if !(0.0..1.0).contains(&jitter) {
                        return Err(perr(path, line, "duration jitter must lie in [0, 1)"));
                    }
                }
                "phase" => phases.push(parse_phase(value).map_err(|m| perr(path, line, m))?),
                _ => return Err(perr(path, line, format!("unknown manifest key `{key}`"))),
            }
        } else {
            run_paths.push((line, resolve(path, l)));
        }
    }
    if run_paths.is_empty() {
        return Err(perr(path, 1, "manifest lists no runs"));
    }
    let mut runs = Vec::with_capacity(run_paths.len());
    for (line, p) in &run_paths {
        if !p.exists() {
            return Err(Error::Link(format!(
                "{}:{line}: run file {} does not exist",
                path.display(),
                p.display()
            )));
        }
        let t = Trajectory::read(p, grid_step)?;
        grid_step.get_or_insert(t.grid_step());
        runs.push(t);
    }
    let ensemble = TrajectoryEnsemble::from_trajectories(&runs)?;
    let generator = if phases.is_empty() {
        None
    } else {
        let model = PhaseModel::new(phases).map_err(|e| perr(path, 1, e.to_string()))?;
        Some(Generator {
            model,
            duration_jitter: jitter,
        })
    };
    Ok(EnsembleSource {
        ensemble: Arc::new(ensemble),
        generator,
    })
}

fn parse_phase(value: &str) -> std::result::Result<Phase, String> {
    let cols: Vec<&str> = value.split(',').map(str::trim).collect();
    if cols.len() != 6 {
        return Err(format!(
            "phase needs kind,duration,base_mb,noise_sd,burst_amp,burst_prob; got `{value}`"
        ));
    }
    let kind =
        PhaseKind::parse(cols[0]).ok_or_else(|| format!("unknown phase kind `{}`", cols[0]))?;
    let num = |i: usize| -> std::result::Result<f64, String> {
        cols[i]
            .parse()
            .map_err(|_| format!("bad number `{}` in phase", cols[i]))
    };
    Ok(Phase {
        kind,
        duration: num(1)?,
        base_mb: num(2)?,
        noise_sd: num(3)?,
        burst_amp: num(4)?,
        burst_prob: num(5)?,
    })
}

/// Parses a scenario file and links every job to its ensemble. Jobs naming
/// the same manifest share one loaded ensemble.
pub fn ingest_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = content_lines(&text);
    match lines.next() {
        Some((_, h)) if h.starts_with("job_id") => {}
        Some((line, h)) => {
            return Err(perr(
                path,
                line,
                format!("expected header starting with `job_id`, got `{h}`"),
            ))
        }
        None => return Err(perr(path, 1, "missing header line")),
    }
    let mut jobs = Vec::new();
    let mut ensembles: BTreeMap<String, EnsembleSource> = BTreeMap::new();
    let mut ground_truth = BTreeMap::new();
    let mut seen = std::collections::BTreeSet::new();
    for (line, l) in lines {
        let cols: Vec<&str> = l.split(',').map(str::trim).collect();
        if cols.len() != 10 && cols.len() != 11 {
            return Err(perr(
                path,
                line,
                format!("expected 10 or 11 columns, got {}", cols.len()),
            ));
        }
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = cols[i]
                .parse()
                .map_err(|_| perr(path, line, format!("bad {name} `{}`", cols[i])))?;
            if !v.is_finite() {
                return Err(perr(path, line, format!("{name} is not finite")));
            }
            Ok(v)
        };
        let job_id = cols[0].to_string();
        if job_id.is_empty() {
            return Err(perr(path, line, "empty job_id"));
        }
        if !seen.insert(job_id.clone()) {
            return Err(perr(path, line, format!("duplicate job_id `{job_id}`")));
        }
        let arrival = num(2, "arrival_s")?;
        if arrival < 0.0 {
            return Err(perr(
                path,
                line,
                format!("negative time: arrival_s = {arrival}"),
            ));
        }
        let total_work = num(3, "total_work_s")?;
        if !(total_work > 0.0) {
            return Err(perr(path, line, "total_work_s must be > 0"));
        }
        let declared_peak = num(4, "declared_peak_mb")?;
        if !(declared_peak > 0.0) {
            return Err(perr(path, line, "declared_peak_mb must be > 0"));
        }
        let priority: u32 = cols[5].parse().map_err(|_| {
            perr(
                path,
                line,
                format!("bad priority `{}` (integer >= 0)", cols[5]),
            )
        })?;
        let deadline = match cols[6] {
            "none" | "" => None,
            _ => {
                let d = num(6, "deadline_s")?;
                if d < 0.0 {
                    return Err(perr(path, line, format!("negative time: deadline_s = {d}")));
                }
                Some(d)
            }
        };
        let checkpoint_size = num(7, "ckpt_mb")?;
        if checkpoint_size < 0.0 {
            return Err(perr(path, line, "ckpt_mb must be >= 0"));
        }
        let atomizable = match cols[8] {
            "1" | "true" => true,
            "0" | "false" => false,
            other => {
                return Err(perr(
                    path,
                    line,
                    format!("atomizable must be 0 or 1, got `{other}`"),
                ))
            }
        };
        let manifest = resolve(path, cols[9]);
        if !manifest.exists() {
            return Err(Error::Link(format!(
                "{}:{line}: job {job_id} references missing ensemble manifest {}",
                path.display(),
                manifest.display()
            )));
        }
        let key = manifest
            .canonicalize()
            .map_err(|e| Error::io(&manifest, e))?
            .display()
            .to_string();
        if !ensembles.contains_key(&key) {
            ensembles.insert(key.clone(), load_manifest(&manifest)?);
        }
        if let Some(gt) = cols.get(10).filter(|s| !s.is_empty()) {
            let gp = resolve(path, gt);
            if !gp.exists() {
                return Err(Error::Link(format!(
                    "{}:{line}: ground truth {} does not exist",
                    path.display(),
                    gp.display()
                )));
            }
            let g = ensembles[&key].ensemble.grid_step();
            ground_truth.insert(job_id.clone(), Trajectory::read(&gp, Some(g))?);
        }
        jobs.push(JobSpec {
            job_id,
            tenant_id: cols[1].to_string(),
            arrival,
            total_work,
            declared_peak,
            ensemble: key,
            deadline,
            priority,
            checkpoint_size,
            atomizable,
        });
    }
    Scenario::new(jobs, ensembles, ground_truth)
}

fn file_safe(s: &str) -> String {
    let t: String = s
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    t.trim_matches('_').to_string()
}

/// Short directory label for an ensemble key. Ingested keys are manifest
/// paths; those use the manifest's directory name, minus a prior `eNN_` prefix.
fn ensemble_label(key: &str) -> String {
    let p = Path::new(key);
    if p.components().count() < 2 {
        return file_safe(key);
    }
    let dir = p
        .parent()
        .and_then(Path::file_name)
        .map(|d| d.to_string_lossy().into_owned());
    let name = match dir {
        Some(d) if p.file_name().is_some_and(|f| f == "manifest.txt") => d,
        _ => p
            .file_stem()
            .map(|f| f.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    let b = name.as_bytes();
    let name =
        if b.len() > 4 && b[0] == b'e' && b[1..3].iter().all(u8::is_ascii_digit) && b[3] == b'_' {
            &name[4..]
        } else {
            &name[..]
        };
    file_safe(name)
}

/// Writes a scenario as a scenario file plus one manifest directory per
/// ensemble. Returns the scenario file path.
pub fn write_scenario(dir: &Path, scenario: &Scenario) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest_of = BTreeMap::new();
    for (i, (key, src)) in scenario.ensembles.iter().enumerate() {
        let name = format!("e{i:02}_{}", ensemble_label(key));
        let edir = dir.join("ensembles").join(&name);
        let rdir = edir.join("runs");
        fs::create_dir_all(&rdir).map_err(|e| Error::io(&rdir, e))?;
        let mut m = String::new();
        let _ = writeln!(m, "grid_step_s = {}", fmt6(src.ensemble.grid_step()));
        if let Some(gen) = &src.generator {
            let _ = writeln!(m, "duration_jitter = {}", fmt6(gen.duration_jitter));
            for p in &gen.model.phases {
                let _ = writeln!(
                    m,
                    "phase = {},{},{},{},{},{}",
                    p.kind.as_str(),
                    fmt6(p.duration),
                    fmt6(p.base_mb),
                    fmt6(p.noise_sd),
                    fmt6(p.burst_amp),
                    fmt6(p.burst_prob)
                );
            }
        }
        for r in 0..src.ensemble.len() {
            let file = format!("run_{r:04}.csv");
            src.ensemble.trajectory(r).write(&rdir.join(&file))?;
            let _ = writeln!(m, "runs/{file}");
        }
        let mpath = edir.join("manifest.txt");
        fs::write(&mpath, m).map_err(|e| Error::io(&mpath, e))?;
        manifest_of.insert(key.clone(), format!("ensembles/{name}/manifest.txt"));
    }
    let mut out = String::from(HEADER);
    out.push('\n');
    if !scenario.ground_truth.is_empty() {
        fs::create_dir_all(dir.join("ground_truth")).map_err(|e| Error::io(dir, e))?;
    }
    for j in &scenario.jobs {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            j.job_id,
            j.tenant_id,
            fmt6(j.arrival),
            fmt6(j.total_work),
            fmt6(j.declared_peak),
            j.priority,
            j.deadline.map_or("none".to_string(), fmt6),
            fmt6(j.checkpoint_size),
            u8::from(j.atomizable),
            manifest_of[&j.ensemble]
        );
        if let Some(t) = scenario.ground_truth.get(&j.job_id) {
            let rel = format!("ground_truth/{}.csv", file_safe(&j.job_id));
            t.write(&dir.join(&rel))?;
            let _ = write!(out, ",{rel}");
        }
        out.push('\n');
    }
    let path = dir.join("scenario.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
