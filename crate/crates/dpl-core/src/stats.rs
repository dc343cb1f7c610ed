//! Deterministic reductions for Monte Carlo output.
//!
//! All means and standard errors are computed by pairwise summation over a
//! slice ordered by path index. The reduction tree depends only on the
//! slice length, never on thread scheduling, which is what makes reports
//! byte-identical across thread counts.

/// Pairwise (cascade) summation over the slice order.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 32 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean via pairwise summation.
pub fn mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "mean of empty sample");
    pairwise_sum(xs) / xs.len() as f64
}

/// Two-pass sample mean and standard error of the mean.
///
/// A single observation has zero standard error by convention.
pub fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return (m, 0.0);
    }
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (m, (var / n as f64).sqrt())
}

/// Largest value of the slice; `-inf` when empty. Order-independent.
pub fn max_all(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}
