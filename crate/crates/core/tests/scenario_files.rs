use sja_core::scenarios;
use sja_core::workload::{ingest_scenario, write_scenario};
use sja_core::{run, SchedulerKind};

#[test]
fn presets_survive_a_trip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["illustrative", "edf"] {
        let p = scenarios::by_name(name, 3).unwrap();
        let path = write_scenario(&dir.path().join(name), &p.scenario).unwrap();
        let back = ingest_scenario(&path).unwrap();
        // ingested ensembles are keyed by manifest path
        let strip = |jobs: &[sja_core::JobSpec]| {
            jobs.iter()
                .map(|j| sja_core::JobSpec {
                    ensemble: String::new(),
                    ..j.clone()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&back.jobs), strip(&p.scenario.jobs));
        assert_eq!(back.grid_step(), p.scenario.grid_step());
        assert_eq!(back.ensembles.len(), p.scenario.ensembles.len());
        for (ja, jb) in p.scenario.jobs.iter().zip(&back.jobs) {
            let (e, b) = (p.scenario.ensemble_of(ja), back.ensemble_of(jb));
            assert_eq!(b.ensemble.len(), e.ensemble.len());
            assert_eq!(b.generator.is_some(), e.generator.is_some());
        }
        let a = run(&p.scenario, &p.config, SchedulerKind::Sja, 3)
            .unwrap()
            .metrics;
        let b = run(&back, &p.config, SchedulerKind::Sja, 3)
            .unwrap()
            .metrics;
        assert_eq!(a.completed, b.completed);
        assert_eq!(a.rejected, b.rejected);
    }
}

#[test]
fn written_files_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let p = scenarios::illustrative().unwrap();
    let first = write_scenario(&dir.path().join("a"), &p.scenario).unwrap();
    let back = ingest_scenario(&first).unwrap();
    let second = write_scenario(&dir.path().join("b"), &back).unwrap();
    assert_eq!(
        std::fs::read_to_string(first).unwrap(),
        std::fs::read_to_string(second).unwrap()
    );
}

#[test]
fn missing_scenario_file_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(ingest_scenario(&dir.path().join("nope.csv")).is_err());
}
