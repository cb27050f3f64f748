//! Benchmark fixtures shared by the criterion benches.

use sja_core::scenarios::GB;
use sja_core::workload::{synth_ensemble, Phase, PhaseModel};
use sja_core::TrajectoryEnsemble;

/// A bursty ensemble of `runs` runs, each `duration` seconds long on a 5 s grid.
pub fn bursty_ensemble(runs: usize, duration: f64) -> TrajectoryEnsemble {
    let model = PhaseModel::new(vec![
        Phase::warmup(duration * 0.1, 6.0 * GB, 200.0),
        Phase::burst(duration * 0.9, 6.0 * GB, 300.0, 4.0 * GB, 0.002),
    ])
    .expect("valid model");
    synth_ensemble(&model, runs, 0.1, 5.0, 42).expect("valid ensemble")
}

/// A stepped envelope with noise-free plateaus, in MB per cell.
pub fn step_envelope(cells: usize) -> Vec<f64> {
    (0..cells)
        .map(|c| match (c * 4) / cells {
            0 => 4.0 * GB,
            1 => 18.0 * GB,
            2 => 9.0 * GB,
            _ => 36.0 * GB,
        })
        .collect()
}
