//! Small estimators shared by the experiments.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Running mean and variance (Welford), mergeable across workers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanVar {
    pub n: u64,
    mean: f64,
    m2: f64,
}

impl MeanVar {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let d = other.mean - self.mean;
        self.mean += d * other.n as f64 / n as f64;
        self.m2 += other.m2 + d * d * (self.n as f64 * other.n as f64) / n as f64;
        self.n = n;
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Unbiased sample variance.
    pub fn var(&self) -> f64 {
        if self.n < 2 {
            f64::NAN
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        (self.var() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for MeanVar {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = MeanVar::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// Standard error of a binomial proportion `k/n`.
pub fn binomial_stderr(k: u64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    let p = k as f64 / n as f64;
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Wilson score interval for `k` successes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Exact one-sided upper bound on `p` when none of `n` trials succeeded:
/// the largest `p` with `(1−p)^n ≥ 1 − level`.
pub fn zero_count_upper(n: u64, level: f64) -> f64 {
    if n == 0 {
        return 1.0;
    }
    1.0 - (1.0 - level).powf(1.0 / n as f64)
}

/// Survival function of the Kolmogorov distribution.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < 1.18 {
        // small-x series converges faster in this form
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * x * x)).exp();
        let mut cdf = 0.0;
        let mut k = 1.0;
        loop {
            let term = y.powf(k * k);
            cdf += term;
            if term < 1e-17 {
                break;
            }
            k += 2.0;
        }
        return (1.0 - (2.0 * std::f64::consts::PI).sqrt() / x * cdf).clamp(0.0, 1.0);
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * x * x).exp();
        sum += sign * term;
        if term < 1e-17 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample Kolmogorov–Smirnov test with the asymptotic p-value
/// (Stephens' small-sample correction of the effective size).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsResult {
    assert!(!a.is_empty() && !b.is_empty(), "empty sample");
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len(), b.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let x = a[i].min(b[j]);
        while i < n && a[i] <= x {
            i += 1;
        }
        while j < m && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_sf((en + 0.12 + 0.11 / en) * d),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum();
    let slope_stderr = if x.len() > 2 {
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    LinearFit {
        slope,
        intercept,
        slope_stderr,
    }
}

/// Lag-1 sample autocorrelation.
pub fn lag1_autocorrelation(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 3 {
        return f64::NAN;
    }
    let m = x.iter().sum::<f64>() / n as f64;
    let c0: f64 = x.iter().map(|v| (v - m).powi(2)).sum();
    let c1: f64 = x.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    c1 / c0
}

/// Median of a sample (mean of the two middle values for even sizes).
pub fn median(x: &[f64]) -> f64 {
    if x.is_empty() {
        return f64::NAN;
    }
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Regenerative ratio estimate `Σy / Στ` with its delta-method standard
/// error over i.i.d. cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioEstimate {
    pub value: f64,
    pub stderr: f64,
    pub cycles: usize,
}

pub fn ratio_estimate(y: &[f64], tau: &[f64]) -> RatioEstimate {
    assert_eq!(y.len(), tau.len());
    let n = y.len();
    if n == 0 {
        return RatioEstimate {
            value: f64::NAN,
            stderr: f64::NAN,
            cycles: 0,
        };
    }
    let sy: f64 = y.iter().sum();
    let st: f64 = tau.iter().sum();
    let r = sy / st;
    let resid: MeanVar = y.iter().zip(tau).map(|(a, t)| a - r * t).collect();
    let tbar = st / n as f64;
    RatioEstimate {
        value: r,
        stderr: resid.var().sqrt() / (tbar * (n as f64).sqrt()),
        cycles: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meanvar_matches_two_pass() {
        let xs: Vec<f64> = (0..101).map(|i| ((i * 37) % 17) as f64 * 0.3 - 1.0).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let acc: MeanVar = xs.iter().copied().collect();
        assert!((acc.mean() - mean).abs() < 1e-12);
        assert!((acc.var() - var).abs() < 1e-12);

        let mut left: MeanVar = xs[..40].iter().copied().collect();
        let right: MeanVar = xs[40..].iter().copied().collect();
        left.merge(&right);
        assert!((left.mean() - mean).abs() < 1e-12);
        assert!((left.var() - var).abs() < 1e-12);
    }

    #[test]
    fn wilson_known_value() {
        // 0 of 10 at z = 1.96: upper = z²/n / (1 + z²/n)
        let (lo, hi) = wilson_interval(0, 10, Z95);
        let z2n = Z95 * Z95 / 10.0;
        assert_eq!(lo, 0.0);
        assert!((hi - z2n / (1.0 + z2n)).abs() < 1e-12);
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((0.5 - lo - (hi - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn zero_count_bound() {
        let u = zero_count_upper(1_000_000, 0.95);
        assert!((u - 2.9957e-6).abs() < 1e-9);
    }

    #[test]
    fn kolmogorov_sf_reference_points() {
        // Reference values of 1 − K(x) from the Kolmogorov distribution.
        assert!((kolmogorov_sf(1.3580986) - 0.05).abs() < 1e-6);
        assert!((kolmogorov_sf(1.6276236) - 0.01).abs() < 1e-6);
        assert!((kolmogorov_sf(0.8275735) - 0.5).abs() < 1e-6);
        // both branches agree near the switch
        let a = kolmogorov_sf(1.1799999);
        let b = kolmogorov_sf(1.18);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn ks_identical_and_shifted() {
        let a: Vec<f64> = (0..500).map(|i| i as f64 / 500.0).collect();
        let r = ks_two_sample(&a, &a);
        assert_eq!(r.statistic, 0.0);
        assert!(r.p_value > 0.99);
        let b: Vec<f64> = a.iter().map(|x| x + 0.3).collect();
        let r = ks_two_sample(&a, &b);
        assert!((r.statistic - 0.3).abs() <= 0.002 + 1e-12);
        assert!(r.p_value < 1e-10);
    }

    #[test]
    fn ols_exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let fit = ols(&x, &y);
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.intercept - 1.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-12);
    }

    #[test]
    fn autocorrelation_of_alternating_series() {
        let x: Vec<f64> = (0..1000).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((lag1_autocorrelation(&x) + 1.0).abs() < 1e-2);
    }

    #[test]
    fn ratio_of_proportional_cycles_has_zero_error() {
        let tau = [1.0, 2.0, 3.0];
        let y = [2.0, 4.0, 6.0];
        let r = ratio_estimate(&y, &tau);
        assert!((r.value - 2.0).abs() < 1e-12);
        assert!(r.stderr < 1e-12);
    }

    #[test]
    fn median_even_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
