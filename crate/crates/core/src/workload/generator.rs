//! Phase-structured synthetic memory trajectories.

use rand::Rng;
use rand_distr::StandardNormal;

use super::{PhaseKind, PhaseModel};
use crate::error::{Error, Result};
use crate::profiles::TrajectoryEnsemble;
use crate::rng::{self, SimRng};
use crate::trajectory::{cells_in, Trajectory};
use crate::Seconds;

/// Draws one run of `duration` seconds. Phase durations are scaled
/// proportionally so the phases span exactly the requested duration.
pub fn generate_trajectory(
    model: &PhaseModel,
    duration: Seconds,
    grid_step: Seconds,
    seed: u64,
) -> Result<Trajectory> {
    model.validate()?;
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(Error::invalid(format!(
            "duration must be > 0, got {duration}"
        )));
    }
    if !(grid_step > 0.0) {
        return Err(Error::invalid(format!(
            "grid step must be > 0, got {grid_step}"
        )));
    }
    let n = cells_in(duration, grid_step).max(1) + 1;
    let span = (n - 1) as f64 * grid_step;
    let scale = span / model.nominal_duration();
    let mut bounds = Vec::with_capacity(model.phases.len() + 1);
    let mut acc = 0.0;
    bounds.push(0.0);
    for p in &model.phases {
        acc += p.duration * scale;
        bounds.push(acc);
    }

    let mut rng = rng::stream(seed, 0);
    let mut samples = Vec::with_capacity(n);
    let mut k = 0;
    for i in 0..n {
        let t = i as f64 * grid_step;
        while k + 1 < model.phases.len() && t >= bounds[k + 1] - 1e-9 * grid_step {
            k += 1;
        }
        let p = &model.phases[k];
        let z: f64 = rng.sample(StandardNormal);
        let u: f64 = rng.random();
        let shape = match p.kind {
            PhaseKind::Warmup => {
                let len = bounds[k + 1] - bounds[k];
                p.base_mb * ((t - bounds[k]) / len).clamp(0.0, 1.0)
            }
            PhaseKind::Steady | PhaseKind::Burst => p.base_mb,
        };
        let burst = if p.kind == PhaseKind::Burst && u < p.burst_prob {
            p.burst_amp
        } else {
            0.0
        };
        samples.push((shape + p.noise_sd * z + burst).max(0.0));
    }
    Trajectory::new(grid_step, samples)
}

/// Uniform jitter of a nominal duration within `±jitter`.
pub fn sample_duration(nominal: Seconds, jitter: f64, rng: &mut SimRng) -> Seconds {
    if jitter > 0.0 {
        nominal * (1.0 + rng.random_range(-jitter..=jitter))
    } else {
        nominal
    }
}

/// `n_runs` independent runs with jittered durations.
pub fn synth_ensemble(
    model: &PhaseModel,
    n_runs: usize,
    duration_jitter: f64,
    grid_step: Seconds,
    seed: u64,
) -> Result<TrajectoryEnsemble> {
    if n_runs < 2 {
        return Err(Error::invalid(format!(
            "an ensemble needs at least 2 runs, got {n_runs}"
        )));
    }
    if !(0.0..1.0).contains(&duration_jitter) {
        return Err(Error::invalid(format!(
            "duration jitter must lie in [0, 1), got {duration_jitter}"
        )));
    }
    let nominal = model.nominal_duration();
    let runs = (0..n_runs as u64)
        .map(|r| {
            let mut drng = rng::stream(seed, 2 * r);
            let d = sample_duration(nominal, duration_jitter, &mut drng).max(grid_step);
            generate_trajectory(model, d, grid_step, rng::sub_seed(seed, 2 * r + 1))
                .map(Trajectory::into_samples)
        })
        .collect::<Result<Vec<_>>>()?;
    TrajectoryEnsemble::new(grid_step, runs)
}
