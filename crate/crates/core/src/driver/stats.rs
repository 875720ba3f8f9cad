use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Two-sided Wilson score interval for `k` passes in `n` trials.
pub fn wilson_interval(k: u64, n: u64, level: f64) -> Result<(f64, f64)> {
    if n == 0 {
        return Err(Error::ZeroTrials);
    }
    if k > n || !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "wilson interval needs k ≤ n and level in (0, 1), got {k}/{n} at {level}"
        )));
    }
    let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
    let (kf, nf) = (k as f64, n as f64);
    let z2 = z * z;
    let center = (kf + z2 / 2.0) / (nf + z2);
    let half = z / (nf + z2) * (kf * (nf - kf) / nf + z2 / 4.0).sqrt();
    let low = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if k == n { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Roots of the score statistic |p̂ − p| / √(p(1−p)/n) = z by bisection.
    fn inverted_score_test(k: u64, n: u64, level: f64) -> (f64, f64) {
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        let phat = k as f64 / n as f64;
        let excess = |p: f64| (phat - p).abs() - z * (p * (1.0 - p) / n as f64).sqrt();
        let root = |mut inside: f64, mut outside: f64| {
            for _ in 0..200 {
                let mid = 0.5 * (inside + outside);
                if excess(mid) <= 0.0 {
                    inside = mid;
                } else {
                    outside = mid;
                }
            }
            0.5 * (inside + outside)
        };
        let low = if k == 0 { 0.0 } else { root(phat, 0.0) };
        let high = if k == n { 1.0 } else { root(phat, 1.0) };
        (low, high)
    }

    #[test]
    fn matches_score_test_inversion() {
        for level in [0.8, 0.9, 0.95] {
            for n in 1..=100 {
                for k in 0..=n {
                    let (lo, hi) = wilson_interval(k, n, level).unwrap();
                    let (olo, ohi) = inverted_score_test(k, n, level);
                    assert!((lo - olo).abs() < 1e-9 && (hi - ohi).abs() < 1e-9, "{k}/{n} at {level}");
                }
            }
        }
    }

    #[test]
    fn boundaries() {
        assert_eq!(wilson_interval(0, 10, 0.9).unwrap().0, 0.0);
        assert_eq!(wilson_interval(10, 10, 0.9).unwrap().1, 1.0);
        assert!(matches!(wilson_interval(0, 0, 0.9), Err(Error::ZeroTrials)));
        assert!(wilson_interval(11, 10, 0.9).is_err());
    }

    #[test]
    fn sixteen_of_eighty_nine() {
        let (lo, hi) = wilson_interval(16, 89, 0.90).unwrap();
        let half = (hi - lo) / 2.0;
        assert!((half - 0.067).abs() < 0.001, "{half}");
        // About six passes either side, not three.
        assert!((half * 89.0 - 6.0).abs() < 0.1);
    }
}
