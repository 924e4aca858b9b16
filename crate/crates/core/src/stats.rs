//! Deterministic reductions over particle arrays.
//!
//! All sums use a fixed-shape pairwise tree so results never depend on how
//! many worker threads produced the inputs.

const LEAF: usize = 32;

/// Pairwise (cascade) summation with a fixed split pattern.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
}

/// Pairwise sum of `f(i)` for `i` in `0..n`.
fn pairwise_sum_by(lo: usize, hi: usize, f: &impl Fn(usize) -> f64) -> f64 {
    if hi - lo <= LEAF {
        return (lo..hi).map(f).sum();
    }
    let mid = lo + (hi - lo) / 2;
    pairwise_sum_by(lo, mid, f) + pairwise_sum_by(mid, hi, f)
}

/// Component-wise mean of `n = states.len() / dim` points stored row-major.
pub fn mean(states: &[f64], dim: usize) -> Vec<f64> {
    let n = states.len() / dim;
    (0..dim)
        .map(|c| pairwise_sum_by(0, n, &|i| states[i * dim + c]) / n as f64)
        .collect()
}

/// First two empirical moments of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m1: Vec<f64>,
    /// Total variance `(1/N) Σ |v_i - m1|²` (biased normalization).
    pub sigma2: f64,
    /// Monte Carlo standard error of `sigma2`.
    pub sigma2_se: f64,
}

/// Mean, biased variance and the standard error of the variance estimate.
///
/// The variance is accumulated in centered form, which equals
/// `(1/N) Σ |v_i|² - |m1|²` but does not cancel catastrophically once the
/// ensemble has collapsed.
pub fn moments(states: &[f64], dim: usize) -> Moments {
    let n = states.len() / dim;
    let m1 = mean(states, dim);
    let sq_dev = |i: usize| -> f64 {
        (0..dim)
            .map(|c| {
                let d = states[i * dim + c] - m1[c];
                d * d
            })
            .sum()
    };
    let sigma2 = pairwise_sum_by(0, n, &sq_dev) / n as f64;
    let fourth = pairwise_sum_by(0, n, &|i| {
        let e = sq_dev(i) - sigma2;
        e * e
    }) / n as f64;
    Moments {
        m1,
        sigma2,
        sigma2_se: (fourth / n as f64).sqrt(),
    }
}
