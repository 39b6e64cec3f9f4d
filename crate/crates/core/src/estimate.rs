//! Small statistical helpers shared by the estimators and tests.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Binomial proportion and its standard error.
pub fn proportion(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = successes as f64 / trials as f64;
    (p, (p * (1.0 - p) / trials as f64).sqrt())
}

/// Wilson score interval at normal quantile `z`.
pub fn wilson(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = z / (1.0 + z2 / n) * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Ratio of sums `sum(num) / sum(den)` with its delete-one jackknife
/// standard error.
pub fn jackknife_ratio(num: &[f64], den: &[f64]) -> (f64, f64) {
    assert_eq!(num.len(), den.len());
    let n = num.len();
    let (a, b): (f64, f64) = (num.iter().sum(), den.iter().sum());
    let ratio = a / b;
    if n < 2 {
        return (ratio, f64::NAN);
    }
    let loo: Vec<f64> = (0..n).map(|i| (a - num[i]) / (b - den[i])).collect();
    let m = loo.iter().sum::<f64>() / n as f64;
    let ss: f64 = loo.iter().map(|x| (x - m) * (x - m)).sum();
    (ratio, ((n as f64 - 1.0) / n as f64 * ss).sqrt())
}

/// Lag-1 autocorrelation.
pub fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 3 {
        return f64::NAN;
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    let var: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    let cov: f64 = xs.windows(2).map(|w| (w[0] - m) * (w[1] - m)).sum();
    cov / var
}

/// Upper-tail probability of a chi-square statistic.
pub fn chi_square_sf(stat: f64, dof: f64) -> f64 {
    if dof <= 0.0 {
        return 1.0;
    }
    let dist = ChiSquared::new(dof).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

/// Pearson test that two count vectors over the same categories come from
/// one distribution. Categories empty in both samples are dropped.
pub fn two_sample_chi_square(a: &[u64], b: &[u64]) -> (f64, f64) {
    assert_eq!(a.len(), b.len());
    let (na, nb): (f64, f64) = (a.iter().sum::<u64>() as f64, b.iter().sum::<u64>() as f64);
    let mut stat = 0.0;
    let mut cells = 0;
    for (&x, &y) in a.iter().zip(b) {
        let tot = (x + y) as f64;
        if tot == 0.0 {
            continue;
        }
        cells += 1;
        let ea = tot * na / (na + nb);
        let eb = tot * nb / (na + nb);
        stat += (x as f64 - ea).powi(2) / ea + (y as f64 - eb).powi(2) / eb;
    }
    (stat, chi_square_sf(stat, cells as f64 - 1.0))
}

/// Pearson independence test on a 2x2 table `[[n00, n01], [n10, n11]]`.
pub fn independence_2x2(t: [[u64; 2]; 2]) -> (f64, f64) {
    let n = (t[0][0] + t[0][1] + t[1][0] + t[1][1]) as f64;
    let rows = [(t[0][0] + t[0][1]) as f64, (t[1][0] + t[1][1]) as f64];
    let cols = [(t[0][0] + t[1][0]) as f64, (t[0][1] + t[1][1]) as f64];
    let mut stat = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            let e = rows[i] * cols[j] / n;
            if e > 0.0 {
                stat += (t[i][j] as f64 - e).powi(2) / e;
            }
        }
    }
    (stat, chi_square_sf(stat, 1.0))
}

/// Pearson goodness of fit of `observed` counts to probabilities
/// `expected`. Cells with expected count below `min_expected` are pooled
/// into one cell. Returns the statistic and its upper-tail probability.
pub fn goodness_of_fit(observed: &[u64], expected: &[f64], min_expected: f64) -> (f64, f64) {
    assert_eq!(observed.len(), expected.len());
    let n = observed.iter().sum::<u64>() as f64;
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(expected) {
        let e = p * n;
        if e < min_expected {
            pool_o += o as f64;
            pool_e += e;
            continue;
        }
        stat += (o as f64 - e).powi(2) / e;
        cells += 1;
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        cells += 1;
    }
    (stat, chi_square_sf(stat, cells as f64 - 1.0))
}

/// Total variation distance between two distributions over a shared key set.
pub fn total_variation<'a, K: Ord + 'a>(
    p: impl IntoIterator<Item = (&'a K, f64)>,
    q: impl IntoIterator<Item = (&'a K, f64)>,
) -> f64 {
    let mut diff: std::collections::BTreeMap<&K, f64> = std::collections::BTreeMap::new();
    for (k, x) in p {
        *diff.entry(k).or_insert(0.0) += x;
    }
    for (k, x) in q {
        *diff.entry(k).or_insert(0.0) -= x;
    }
    diff.values().map(|x| x.abs()).sum::<f64>() / 2.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jackknife_of_constant_ratio_is_exact() {
        let num = [2.0, 4.0, 6.0, 8.0];
        let den = [1.0, 2.0, 3.0, 4.0];
        let (r, se) = jackknife_ratio(&num, &den);
        assert_eq!(r, 2.0);
        assert!(se.abs() < 1e-12);
    }

    #[test]
    fn chi_square_tail() {
        assert!((chi_square_sf(3.841_458_820_694_124, 1.0) - 0.05).abs() < 1e-9);
        let (_, p) = two_sample_chi_square(&[50, 50], &[50, 50]);
        assert!((p - 1.0).abs() < 1e-12);
        let (_, p) = independence_2x2([[500, 0], [0, 500]]);
        assert!(p < 1e-10);
    }

    #[test]
    fn wilson_contains_estimate() {
        let (lo, hi) = wilson(30, 100, 1.96);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson(0, 0, 1.96), (0.0, 1.0));
    }

    #[test]
    fn perfect_fit() {
        let (stat, p) = goodness_of_fit(&[25, 25, 50, 0], &[0.25, 0.25, 0.5, 0.0], 5.0);
        assert!(stat.abs() < 1e-12 && (p - 1.0).abs() < 1e-9);
    }

    #[test]
    fn tv_distance() {
        let a = [(1, 0.5), (2, 0.5)];
        let b = [(2, 0.5), (3, 0.5)];
        let tv = total_variation(a.iter().map(|(k, x)| (k, *x)), b.iter().map(|(k, x)| (k, *x)));
        assert!((tv - 0.5).abs() < 1e-15);
    }
}
