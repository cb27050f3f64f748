use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn sja(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sja"))
        .args(args)
        .env("SJA_OUT_DIR", out_root)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

#[test]
fn run_writes_artifacts_and_reruns_identically_from_the_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let o = sja(
        &[
            "run",
            "--preset",
            "illustrative",
            "--scheduler",
            "sja",
            "--seed",
            "7",
            "--out",
            a.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "events.jsonl",
        "metrics.csv",
        "jobs.csv",
        "summary.txt",
        "config.txt",
    ] {
        assert!(a.join(f).exists(), "missing {f}");
    }
    let echo = read(&a.join("config.txt"));
    assert!(echo.contains("run.preset = illustrative"));
    assert!(echo.contains("run.seed = 7"));

    let b = tmp.path().join("b");
    let o = sja(
        &[
            "run",
            "--config",
            a.join("config.txt").to_str().unwrap(),
            "--out",
            b.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in [
        "events.jsonl",
        "metrics.csv",
        "jobs.csv",
        "summary.txt",
        "config.txt",
    ] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} differs");
    }
}

#[test]
fn flags_override_set_which_overrides_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.txt");
    fs::write(
        &cfg,
        "risk.eps = 0.3\nsja.lookahead = 900\nseg.tau_min = 120\n",
    )
    .unwrap();
    let out = tmp.path().join("o");
    let o = sja(
        &[
            "run",
            "--preset",
            "priority-inversion",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "risk.eps=0.2",
            "--set",
            "sja.lookahead=1200",
            "--eps",
            "0.1",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let echo = read(&out.join("config.txt"));
    assert!(echo.contains("risk.eps = 0.1\n"), "{echo}");
    assert!(echo.contains("sja.lookahead = 1200\n"), "{echo}");
    assert!(echo.contains("seg.tau_min = 120\n"), "{echo}");
    // the preset's own policy survives
    assert!(echo.contains("policy.grant_policy = priority\n"), "{echo}");
}

#[test]
fn default_output_goes_under_the_env_root() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sja(&["run", "--preset", "priority-inversion"], tmp.path());
    assert_eq!(code(&o), 0);
    assert!(tmp.path().join("run").join("metrics.csv").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: [&[&str]; 6] = [
        &["run"],
        &["run", "--preset", "nope"],
        &[
            "run",
            "--preset",
            "illustrative",
            "--scheduler",
            "round-robin",
        ],
        &["compare", "--preset", "illustrative", "--schedulers", "sja"],
        &[
            "compare",
            "--preset",
            "illustrative",
            "--schedulers",
            "sja,lottery",
        ],
        &[
            "sweep",
            "--preset",
            "illustrative",
            "--axis",
            "gpus",
            "--values",
            "1,2",
        ],
    ];
    for args in cases {
        let o = sja(args, tmp.path());
        assert_eq!(
            code(&o),
            2,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
}

#[test]
fn invalid_values_and_missing_files_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let o = sja(
        &["run", "--preset", "illustrative", "--eps", "1.5"],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    let o = sja(
        &[
            "run",
            "--preset",
            "illustrative",
            "--set",
            "risk.nonsense=1",
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
    let o = sja(
        &[
            "validate",
            "--scenario",
            tmp.path().join("none.csv").to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 1);
}

#[test]
fn compare_writes_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cmp");
    let o = sja(
        &[
            "compare",
            "--preset",
            "illustrative",
            "--schedulers",
            "sja,first-fit",
            "--seeds",
            "1,2",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out.join("compare.csv"));
    assert!(csv.starts_with("scheduler,metric,n,mean,sd,ci95\n"));
    assert!(csv.contains("sja,used_utilization,2,"));
    assert!(csv.contains("first-fit,used_utilization,2,"));
    assert!(read(&out.join("compare_runs.csv")).starts_with("scheduler,seed,metric,value\n"));
    assert!(read(&out.join("compare.txt")).contains("reserved_utilization"));
}

#[test]
fn sweep_covers_every_value() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sw");
    let o = sja(
        &[
            "sweep",
            "--preset",
            "illustrative",
            "--axis",
            "eps",
            "--values",
            "0.05,0.2",
            "--seeds",
            "1,2",
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = read(&out.join("sweep.csv"));
    assert!(csv.contains("eps,0.05,used_utilization,2,"));
    assert!(csv.contains("eps,0.2,used_utilization,2,"));
    let runs = read(&out.join("sweep_runs.csv"));
    assert!(runs.lines().filter(|l| l.contains(",makespan,")).count() == 4);
}

#[test]
fn synth_then_validate_then_run_from_files() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("scn");
    let o = sja(
        &[
            "synth",
            "--preset",
            "illustrative",
            "--out",
            dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let scenario = dir.join("scenario.csv");
    let o = sja(
        &["validate", "--scenario", scenario.to_str().unwrap()],
        tmp.path(),
    );
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("4 jobs"));
    let out = tmp.path().join("r");
    let o = sja(
        &[
            "run",
            "--scenario",
            scenario.to_str().unwrap(),
            "--config",
            dir.join("config.txt").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(read(&out.join("metrics.csv")).contains("completed,4"));
}
