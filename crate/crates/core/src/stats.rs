//! Small order-statistic helpers shared by profiles, metrics and policies.

use serde::Serialize;

/// Guard against `q * n` landing a hair above an integer (e.g. `0.9 * 10`).
const RANK_SLACK: f64 = 1e-9;

/// 1-based nearest-rank index `ceil(q * n)`, clamped to `[1, n]`.
///
/// `n` must be non-zero.
pub fn nearest_rank(q: f64, n: usize) -> usize {
    debug_assert!(n > 0);
    let k = (q * n as f64 - RANK_SLACK).ceil();
    (k.max(1.0) as usize).min(n)
}

/// Smallest success count `k` such that `k / n >= q`.
pub fn required_count(q: f64, n: usize) -> usize {
    let k = (q * n as f64 - RANK_SLACK).ceil();
    k.max(0.0) as usize
}

/// Nearest-rank quantile of an ascending slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    sorted[nearest_rank(q, sorted.len()) - 1]
}

/// Nearest-rank quantile of an unsorted sample. Returns `None` when empty.
pub fn quantile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(quantile_sorted(&v, q))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let ss: f64 = values.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        if values.is_empty() {
            return Summary::default();
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Summary {
            count: v.len(),
            mean: mean(&v),
            p50: quantile_sorted(&v, 0.5),
            p95: quantile_sorted(&v, 0.95),
            max: v[v.len() - 1],
        }
    }
}
