//! Small statistics toolkit: moments, least-squares slopes, log ladders and
//! percentile bootstrap. Everything here works in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

pub fn skewness(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let n = xs.len() as f64;
    let m2 = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    let m3 = xs.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

/// Pearson correlation.
pub fn correlation(xs: &[f64], ys: &[f64]) -> f64 {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// `E|x|^k` estimated by the sample mean.
pub fn abs_moment(xs: &[f64], k: f64) -> f64 {
    mean(&xs.iter().map(|x| x.abs().powf(k)).collect::<Vec<_>>())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Ordinary least squares `y = slope x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> LineFit {
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
    }
    let slope = sxy / sxx;
    LineFit {
        slope,
        intercept: my - slope * mx,
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).slope
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn logspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Ratio of the largest to the smallest value; infinite if any value is
/// nonpositive and not all are zero.
pub fn max_min_ratio(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 && lo == 0.0 {
        1.0
    } else if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// Linear-interpolated quantile of sorted data, `q` in `[0,1]`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let w = pos - lo as f64;
    sorted[lo] * (1.0 - w) + sorted[hi] * w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Percentile bootstrap over row indices `0..n`.
///
/// `statistic` receives a multiset of indices and returns one value per
/// tracked quantity; the returned intervals are 95% percentile intervals
/// for each quantity, widened if needed so they contain `point`.
pub fn bootstrap<F>(n: usize, resamples: usize, seed: u64, point: &[f64], statistic: F) -> Vec<Interval>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draws: Vec<Vec<f64>> = vec![Vec::with_capacity(resamples); point.len()];
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for slot in idx.iter_mut() {
            *slot = rng.random_range(0..n);
        }
        for (q, v) in statistic(&idx).into_iter().enumerate() {
            draws[q].push(v);
        }
    }
    draws
        .into_iter()
        .zip(point)
        .map(|(mut d, &p)| {
            d.retain(|v| v.is_finite());
            d.sort_by(f64::total_cmp);
            let lo = quantile_sorted(&d, 0.025);
            let hi = quantile_sorted(&d, 0.975);
            Interval {
                lo: lo.min(p),
                hi: hi.max(p),
            }
        })
        .collect()
}

/// Bootstrap CI of the mean of `xs`.
pub fn bootstrap_mean(xs: &[f64], seed: u64) -> Interval {
    let point = mean(xs);
    bootstrap(xs.len(), BOOTSTRAP_RESAMPLES, seed, &[point], |idx| {
        vec![idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64]
    })[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn basic_moments() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        assert_abs_diff_eq!(variance(&xs), 5.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(skewness(&xs), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(abs_moment(&[-2.0, 2.0], 2.0), 4.0);
    }

    #[test]
    fn fits_exact_power_law() {
        let x = logspace(1e-3, 1e-1, 7);
        let y: Vec<f64> = x.iter().map(|t| 3.0 * t.powf(-0.25)).collect();
        assert_abs_diff_eq!(log_log_slope(&x, &y), -0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(x[0], 1e-3, epsilon = 1e-15);
        assert_abs_diff_eq!(x[6], 1e-1, epsilon = 1e-14);
    }

    #[test]
    fn ratio_edge_cases() {
        assert_eq!(max_min_ratio(&[0.0, 0.0]), 1.0);
        assert_eq!(max_min_ratio(&[0.0, 1.0]), f64::INFINITY);
        assert_eq!(max_min_ratio(&[2.0, 1.0, 4.0]), 4.0);
    }

    #[test]
    fn bootstrap_is_deterministic_and_covers_point() {
        let xs: Vec<f64> = (0..200).map(|i| (i as f64 * 0.7).sin()).collect();
        let a = bootstrap_mean(&xs, 11);
        let b = bootstrap_mean(&xs, 11);
        assert_eq!(a, b);
        assert!(a.contains(mean(&xs)));
        assert!(a.hi - a.lo < 0.3);
    }
}
