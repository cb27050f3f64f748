//! Uniform-grid time series and their on-disk form.
//!
//! Samples use step-hold semantics: sample `i` holds over
//! `[i * grid_step, (i + 1) * grid_step)`. A trajectory of `n` samples
//! describes a run of duration `(n - 1) * grid_step`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::{Megabytes, Seconds};

const GRID_SLACK: f64 = 1e-9;

/// Half-open range of grid cells `[lo, hi)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct CellRange {
    pub lo: usize,
    pub hi: usize,
}

impl CellRange {
    pub fn new(lo: usize, hi: usize) -> Self {
        CellRange { lo, hi: hi.max(lo) }
    }

    pub fn len(&self) -> usize {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi == self.lo
    }

    /// Intersection with `[0, n)`.
    pub fn clamp(&self, n: usize) -> CellRange {
        CellRange::new(self.lo.min(n), self.hi.min(n))
    }
}

/// Closed job-relative time interval `[start, end]`, in seconds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeWindow {
    pub start: Seconds,
    pub end: Seconds,
}

impl TimeWindow {
    pub fn new(start: Seconds, end: Seconds) -> Self {
        TimeWindow { start, end }
    }

    /// Grid points touched by the window, both endpoints snapped outward.
    pub fn cells(&self, grid_step: Seconds) -> CellRange {
        let lo = (self.start / grid_step + GRID_SLACK).floor().max(0.0) as usize;
        let hi = (self.end / grid_step - GRID_SLACK).ceil().max(0.0) as usize + 1;
        CellRange::new(lo, hi)
    }
}

/// Number of whole grid cells in `duration`, rounding to the nearest cell.
pub fn cells_in(duration: Seconds, grid_step: Seconds) -> usize {
    (duration / grid_step).round().max(0.0) as usize
}

/// Number of grid cells needed to cover `duration` (rounds up).
pub fn cells_covering(duration: Seconds, grid_step: Seconds) -> usize {
    (duration / grid_step - GRID_SLACK).ceil().max(0.0) as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    grid_step: Seconds,
    samples: Vec<Megabytes>,
}

impl Trajectory {
    pub fn new(grid_step: Seconds, samples: Vec<Megabytes>) -> Result<Self> {
        if !(grid_step > 0.0) || !grid_step.is_finite() {
            return Err(Error::invalid(format!(
                "grid step must be > 0, got {grid_step}"
            )));
        }
        if samples.is_empty() {
            return Err(Error::invalid("trajectory has no samples"));
        }
        if let Some(v) = samples.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::invalid(format!(
                "sample {v} is negative or not finite"
            )));
        }
        Ok(Trajectory { grid_step, samples })
    }

    pub fn grid_step(&self) -> Seconds {
        self.grid_step
    }

    pub fn samples(&self) -> &[Megabytes] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Megabytes> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> Seconds {
        (self.samples.len() - 1) as f64 * self.grid_step
    }

    pub fn peak(&self) -> Megabytes {
        self.samples.iter().copied().fold(0.0, f64::max)
    }

    /// Step-hold value at job-relative time `t`; the last sample holds past the end.
    pub fn value_at(&self, t: Seconds) -> Megabytes {
        let i = (t / self.grid_step + GRID_SLACK).floor().max(0.0) as usize;
        self.samples[i.min(self.samples.len() - 1)]
    }

    /// Resize to exactly `n` samples: truncate, or hold the last value.
    pub fn fit_len(&self, n: usize) -> Trajectory {
        let n = n.max(1);
        let mut samples: Vec<f64> = self.samples.iter().copied().take(n).collect();
        let last = *self.samples.last().expect("non-empty");
        samples.resize(n, last);
        Trajectory {
            grid_step: self.grid_step,
            samples,
        }
    }

    /// Integral of the step function over cells `[lo, hi)`, in MB·s.
    pub fn integral(&self, cells: CellRange) -> f64 {
        let r = cells.clamp(self.samples.len());
        self.samples[r.lo..r.hi].iter().sum::<f64>() * self.grid_step
    }

    /// Writes the `time_s,mem_mb` file form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time_s,mem_mb\n");
        for (i, v) in self.samples.iter().enumerate() {
            let _ = writeln!(out, "{},{}", fmt6(i as f64 * self.grid_step), fmt6(*v));
        }
        out
    }

    /// Parses the `time_s,mem_mb` file form. When `grid_step` is `None` the
    /// step is inferred from the first two rows.
    pub fn from_csv(text: &str, grid_step: Option<Seconds>, path: &Path) -> Result<Trajectory> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim().eq_ignore_ascii_case("time_s,mem_mb") => {}
            Some((i, h)) => {
                return Err(perr(
                    i + 1,
                    format!("expected header `time_s,mem_mb`, got `{h}`"),
                ))
            }
            None => return Err(perr(1, "missing header `time_s,mem_mb`".into())),
        }
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for (i, line) in lines {
            let mut cols = line.split(',').map(str::trim);
            let (Some(t), Some(v), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(perr(i + 1, format!("expected two columns, got `{line}`")));
            };
            let t: f64 = t
                .parse()
                .map_err(|_| perr(i + 1, format!("bad time `{t}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| perr(i + 1, format!("bad memory value `{v}`")))?;
            if !(v >= 0.0) {
                return Err(perr(i + 1, format!("negative memory value {v}")));
            }
            times.push((i + 1, t));
            samples.push(v);
        }
        if samples.is_empty() {
            return Err(perr(1, "trajectory has no samples".into()));
        }
        let step = match grid_step {
            Some(g) => g,
            None if times.len() >= 2 => times[1].1 - times[0].1,
            None => 1.0,
        };
        if !(step > 0.0) {
            return Err(perr(times[0].0, format!("non-positive grid step {step}")));
        }
        for (k, (line, t)) in times.iter().enumerate() {
            let expect = k as f64 * step;
            // six significant digits on the way out
            let tol = 1e-5 * expect.abs().max(step);
            if (t - expect).abs() > tol {
                return Err(perr(
                    *line,
                    format!("time {t} is off the {step} s grid (expected {expect})"),
                ));
            }
        }
        Trajectory::new(step, samples)
    }

    pub fn read(path: &Path, grid_step: Option<Seconds>) -> Result<Trajectory> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Trajectory::from_csv(&text, grid_step, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Formats a value with six significant digits, trimming trailing zeros.
pub fn fmt6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() {
            "0".into()
        } else {
            format!("{x}")
        };
    }
    let exp = x.abs().log10().floor() as i32;
    if (-4..6).contains(&exp) {
        let dec = (5 - exp).max(0) as usize;
        let s = format!("{x:.dec$}");
        let s = if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        };
        if s == "-0" {
            "0".into()
        } else {
            s
        }
    } else {
        let s = format!("{x:.5e}");
        let (mantissa, e) = s.split_once('e').expect("exponent form");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        format!("{mantissa}e{e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn window_cells_snap_outward() {
        let w = TimeWindow::new(0.0, 540.0);
        assert_eq!(w.cells(60.0), CellRange::new(0, 10));
        let w = TimeWindow::new(30.0, 90.0);
        assert_eq!(w.cells(60.0), CellRange::new(0, 3));
    }

    #[test]
    fn fmt6_examples() {
        assert_eq!(fmt6(8192.0), "8192");
        assert_eq!(fmt6(0.125), "0.125");
        assert_eq!(fmt6(1234.5678), "1234.57");
        assert_eq!(fmt6(12345678.0), "1.23457e7");
        assert_eq!(fmt6(0.0), "0");
    }

    #[test]
    fn csv_rejects_missing_header_and_off_grid_time() {
        let p = Path::new("t.csv");
        let err = Trajectory::from_csv("0,1\n1,2\n", None, p).unwrap_err();
        assert!(err.to_string().contains("header"));
        let err = Trajectory::from_csv("time_s,mem_mb\n0,1\n1,2\n2.5,3\n", None, p).unwrap_err();
        assert!(err.to_string().contains(":4:"), "{err}");
    }

    #[test]
    fn fit_len_holds_last_value() {
        let t = Trajectory::new(1.0, vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(t.fit_len(5).samples(), &[1.0, 2.0, 3.0, 3.0, 3.0]);
        assert_eq!(t.fit_len(2).samples(), &[1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_stable_at_six_digits(
            samples in proptest::collection::vec(0.0f64..1e8, 1..50),
            step in prop_oneof![Just(1.0), Just(0.5), Just(5.0), Just(60.0)],
        ) {
            let t = Trajectory::new(step, samples).unwrap();
            let once = t.to_csv();
            let back = Trajectory::from_csv(&once, None, Path::new("x")).unwrap();
            prop_assert_eq!(back.len(), t.len());
            prop_assert_eq!(back.to_csv(), once);
            for (a, b) in t.samples().iter().zip(back.samples()) {
                prop_assert!((a - b).abs() <= 5e-6 * a.abs() + 1e-12);
            }
        }
    }
}
