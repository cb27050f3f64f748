use criterion::{black_box, criterion_group, criterion_main, Criterion};

use sja_bench::{bursty_ensemble, step_envelope};
use sja_core::profiles::build_profile;
use sja_core::protocol::segment_window;
use sja_core::scenarios;
use sja_core::{run, SchedulerKind, SegmentationConfig, SliceCatalog};

fn profiles(c: &mut Criterion) {
    let ens = bursty_ensemble(200, 3600.0);
    c.bench_function("build_profile 200x721", |b| {
        b.iter(|| build_profile(black_box(&ens), &[0.05]).unwrap())
    });
    let p = build_profile(&ens, &[0.05]).unwrap();
    c.bench_function("admissible_extent 200 runs", |b| {
        b.iter(|| p.admissible_extent(black_box(100), 10240.0, 0.05).unwrap())
    });
}

fn segmentation(c: &mut Criterion) {
    let u = step_envelope(720);
    let cat = SliceCatalog::default();
    let seg = SegmentationConfig::default();
    c.bench_function("segment_window 720 cells", |b| {
        b.iter(|| segment_window(black_box(&u), 5.0, &cat, 40960.0, &seg).unwrap())
    });
}

fn simulation(c: &mut Criterion) {
    let p = scenarios::fragmented(1).unwrap();
    let mut g = c.benchmark_group("simulation");
    g.sample_size(10);
    for kind in [SchedulerKind::Sja, SchedulerKind::FirstFit] {
        g.bench_function(format!("fragmented {kind}"), |b| {
            b.iter(|| run(&p.scenario, &p.config, kind, 1).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, profiles, segmentation, simulation);
criterion_main!(benches);
