//! Cold-start correction: per-flag warm-up curves, the min-rule warm
//! fraction, mixture inversion, and its delta-method variance.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::evaluator::{Correction, EvaluationRecord};
use crate::flagspace::{Configuration, FlagSpace};

/// Warm fractions at or below this are treated as zero.
pub const W_MIN: f64 = 1e-6;

/// Variance assigned to records that carry no information about the warm
/// target: the largest Bernoulli variance.
pub const PRIOR_FLOOR: f64 = 0.25;

/// Saturation curve `w(n) = 1 − exp(−n/κ)` for one flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarmCurve {
    pub kappa: f64,
    /// Residual variance of the curve fit.
    pub sigma2: f64,
    /// Set when every logged reading was zero: the flag never warms.
    pub dead: bool,
}

impl WarmCurve {
    pub fn with_kappa(kappa: f64) -> Self {
        WarmCurve { kappa, sigma2: 0.0, dead: false }
    }

    pub fn at(&self, n: u64) -> f64 {
        if self.dead {
            0.0
        } else {
            1.0 - (-(n as f64) / self.kappa).exp()
        }
    }
}

/// Warm-up curves for every warm-dependent flag of a space. Flags that do
/// not depend on cross-session state are always fully warm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WarmupModel {
    /// Keyed by flag index.
    pub curves: BTreeMap<usize, WarmCurve>,
    pub prior_floor: f64,
}

impl WarmupModel {
    /// Every warm flag on the default curve.
    pub fn new(space: &FlagSpace, default_kappa: f64) -> Self {
        let curves = space
            .flags()
            .iter()
            .enumerate()
            .filter(|(_, f)| f.warm_dependent)
            .map(|(i, _)| (i, WarmCurve::with_kappa(default_kappa)))
            .collect();
        WarmupModel { curves, prior_floor: PRIOR_FLOOR }
    }

    pub fn flag_fraction(&self, flag: usize, n: u64) -> f64 {
        self.curves.get(&flag).map_or(1.0, |c| c.at(n))
    }
}

/// Fits `κ` per warm flag by least squares on plateau-normalized readings.
/// Each log is a sequence of `(session, consumer reading)`; flags without a
/// log keep `default_kappa`.
pub fn fit_warm_curves(space: &FlagSpace, logs: &BTreeMap<String, Vec<(u64, f64)>>, default_kappa: f64) -> WarmupModel {
    let mut model = WarmupModel::new(space, default_kappa);
    for (name, log) in logs {
        let Some(i) = space.index_of(name) else { continue };
        if !space.flag(i).warm_dependent || log.is_empty() {
            continue;
        }
        model.curves.insert(i, fit_curve(log));
    }
    model
}

fn fit_curve(log: &[(u64, f64)]) -> WarmCurve {
    let plateau = log.iter().map(|&(_, v)| v).fold(0.0, f64::max);
    if plateau <= 0.0 {
        return WarmCurve { kappa: f64::INFINITY, sigma2: PRIOR_FLOOR, dead: true };
    }
    let points: Vec<(f64, f64)> = log.iter().map(|&(n, v)| (n as f64, v / plateau)).collect();
    let sse = |log_kappa: f64| {
        let kappa = log_kappa.exp();
        points.iter().map(|&(n, y)| (y - (1.0 - (-n / kappa).exp())).powi(2)).sum::<f64>()
    };
    // Golden-section search on log κ; the objective is smooth and, for
    // saturating data, unimodal over this bracket.
    let (mut a, mut b) = (1e-3f64.ln(), 1e4f64.ln());
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (sse(c), sse(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = sse(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = sse(d);
        }
    }
    let log_kappa = 0.5 * (a + b);
    let dof = points.len().saturating_sub(1).max(1) as f64;
    WarmCurve { kappa: log_kappa.exp(), sigma2: sse(log_kappa) / dof, dead: false }
}

/// Min-rule warm fraction over the configuration's enabled warm flags, with
/// the curve variance of the flag attaining the minimum. `(1, 0)` when no
/// warm flag is enabled.
pub fn warm_fraction(config: &Configuration, n: u64, space: &FlagSpace, model: &WarmupModel) -> (f64, f64) {
    let mut best = (1.0, 0.0);
    for (&i, curve) in &model.curves {
        if !space.flag(i).is_on(config.get(i)) {
            continue;
        }
        let w = curve.at(n);
        if w < best.0 || (w == best.0 && curve.sigma2 > best.1) {
            best = (w, curve.sigma2);
        }
    }
    best
}

/// Inverts the warm mixture. Returns the estimate clipped to [0, 1] and
/// whether clipping happened. At `w ≤ W_MIN` the observation is returned
/// unchanged and the caller must treat the record as uninformative.
pub fn invert_warm(p_obs: f64, p_base: f64, w: f64) -> (f64, bool) {
    if w <= W_MIN {
        return (p_obs, false);
    }
    let raw = (p_obs - (1.0 - w) * p_base) / w;
    if raw < 0.0 {
        (0.0, true)
    } else if raw > 1.0 {
        (1.0, true)
    } else {
        (raw, false)
    }
}

/// Delta-method variance of the inverted estimate. A clipped estimate has
/// its observation term replaced by the worst-case Bernoulli value.
#[allow(clippy::too_many_arguments)]
pub fn corrected_variance(
    p_obs: f64,
    p_base: f64,
    w: f64,
    var_obs: f64,
    var_base: f64,
    var_w: f64,
    clipped: bool,
    prior_floor: f64,
) -> f64 {
    if w <= W_MIN {
        return prior_floor;
    }
    let w2 = w * w;
    let obs = if clipped { 0.25 / w2 } else { var_obs / w2 };
    obs + (1.0 - w).powi(2) * var_base / w2 + (p_obs - p_base).powi(2) * var_w / (w2 * w2)
}

/// Binomial variance of an `m`-task pass rate, with the rate kept at least
/// `1/(2m)` away from 0 and 1 so the variance stays positive.
pub fn observation_variance(p: f64, m: usize) -> f64 {
    let m = m as f64;
    let floor = 0.5 / m;
    let p = p.clamp(floor, 1.0 - floor);
    p * (1.0 - p) / m
}

/// Computes the correction for `record` against the baseline anchor.
pub fn correct_record(
    record: &EvaluationRecord,
    space: &FlagSpace,
    model: &WarmupModel,
    p_base: f64,
    var_base: f64,
) -> Correction {
    let (w, var_w) = warm_fraction(&record.config, record.session_index, space, model);
    let p_obs = record.raw_pass_rate;
    let (target, clipped) = invert_warm(p_obs, p_base, w);
    let uninformative = w <= W_MIN;
    let variance = corrected_variance(
        p_obs,
        p_base,
        w,
        observation_variance(p_obs, record.fidelity()),
        var_base,
        var_w,
        clipped,
        model.prior_floor,
    );
    Correction { warm_fraction: w, target, variance, clipped, uninformative }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::test_support::{harness9, record_with};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Binomial, Distribution, Normal};
    use statrs::distribution::Discrete;

    #[test]
    fn inversion_examples() {
        assert_eq!(invert_warm(0.5, 0.2, 1.0), (0.5, false));
        let (p, clipped) = invert_warm(0.4, 0.2, 0.5);
        assert_relative_eq!(p, 0.6, epsilon = 1e-15);
        assert!(!clipped);
        assert_eq!(invert_warm(0.1, 0.2, 0.05), (0.0, true));
        assert_eq!(invert_warm(0.3, 0.2, 0.0), (0.3, false));
    }

    #[test]
    fn variance_examples() {
        assert_relative_eq!(corrected_variance(0.3, 0.2, 1.0, 0.01, 0.0, 0.0, false, 0.25), 0.01);
        let v = corrected_variance(0.4, 0.2, 0.5, 0.01, 0.0025, 0.01, false, 0.25);
        assert_relative_eq!(v, 0.0489, epsilon = 1e-12);
        let v = corrected_variance(0.4, 0.2, 0.5, 0.01, 0.0025, 0.01, true, 0.25);
        assert_relative_eq!(v, 1.0089, epsilon = 1e-12);
        assert_eq!(corrected_variance(0.4, 0.2, 0.0, 0.01, 0.0025, 0.01, false, 0.25), 0.25);
    }

    #[test]
    fn observation_variance_stays_positive() {
        assert_relative_eq!(observation_variance(0.0, 10), 0.05 * 0.95 / 10.0);
        assert_relative_eq!(observation_variance(1.0, 10), 0.05 * 0.95 / 10.0);
        assert_relative_eq!(observation_variance(0.5, 8), 0.25 / 8.0);
    }

    #[test]
    fn min_rule_over_enabled_warm_flags() {
        let space = harness9();
        let mut model = WarmupModel::new(&space, 2.0);
        let mi = space.index_of("memory_index").unwrap();
        let rf = space.index_of("reflexion").unwrap();
        let sc = space.index_of("semantic_cache").unwrap();

        let mut c = space.baseline_config();
        c.set(sc, 1);
        assert_eq!(warm_fraction(&c, 0, &space, &model).0, 1.0);

        // w values 0.4 and 0.9 at n = 1.
        model.curves.insert(mi, WarmCurve::with_kappa(-1.0 / (0.6f64).ln()));
        model.curves.insert(rf, WarmCurve::with_kappa(-1.0 / (0.1f64).ln()));
        c.set(mi, 1);
        c.set(rf, 1);
        assert_relative_eq!(warm_fraction(&c, 1, &space, &model).0, 0.4, epsilon = 1e-12);
        assert_eq!(warm_fraction(&c, 0, &space, &model).0, 0.0);
    }

    #[test]
    fn curve_fitting() {
        let space = harness9();
        let logs = BTreeMap::from([
            ("memory_index".to_string(), (1..=6).map(|n| (n, 7.0)).collect::<Vec<_>>()),
            ("reflexion".to_string(), vec![(1, 0.0), (2, 0.0), (3, 0.0)]),
            ("semantic_cache".to_string(), vec![(1, 1.0)]),
        ]);
        let model = fit_warm_curves(&space, &logs, 2.0);
        let mi = space.index_of("memory_index").unwrap();
        let rf = space.index_of("reflexion").unwrap();
        let tr = space.index_of("trajectory_replay").unwrap();
        assert!(model.flag_fraction(mi, 1) >= 0.63);
        assert_eq!(model.flag_fraction(rf, 50), 0.0);
        assert_eq!(model.curves[&rf].sigma2, PRIOR_FLOOR);
        assert_relative_eq!(model.flag_fraction(tr, 2), 1.0 - (-1.0f64).exp());
        assert_eq!(model.flag_fraction(space.index_of("semantic_cache").unwrap(), 0), 1.0);
    }

    #[test]
    fn curve_fit_recovers_kappa() {
        let log: Vec<(u64, f64)> = (0..12).map(|n| (n, 40.0 * (1.0 - (-(n as f64) / 3.0).exp()))).collect();
        let curve = fit_curve(&log);
        // Plateau normalization uses the largest reading, slightly below 40.
        assert!((curve.kappa - 3.0).abs() < 0.3, "{}", curve.kappa);
        assert!(curve.sigma2 < 1e-3);
    }

    #[test]
    fn uninformative_records_get_the_floor() {
        let space = harness9();
        let model = WarmupModel::new(&space, 2.0);
        let mut c = space.baseline_config();
        c.set(space.index_of("reflexion").unwrap(), 1);
        let mut r = record_with(&c, BTreeMap::new(), 5);
        r.session_index = 0;
        let corr = correct_record(&r, &space, &model, 0.2, 0.001);
        assert!(corr.uninformative);
        assert_eq!(corr.variance, PRIOR_FLOOR);
    }

    #[test]
    fn inversion_is_unbiased_under_the_mixture() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let (p_inf, p_base, m) = (0.55, 0.2, 89u64);
        for n in 1..=10u64 {
            let w = 1.0 - (-(n as f64) / 2.0).exp();
            let binom = Binomial::new(m, w * p_inf + (1.0 - w) * p_base).unwrap();
            let draws: Vec<f64> =
                (0..1000).map(|_| invert_warm(binom.sample(&mut rng) as f64 / m as f64, p_base, w).0).collect();
            let mean = draws.iter().sum::<f64>() / 1000.0;
            let sd = (draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 999.0).sqrt();
            assert!((mean - p_inf).abs() <= 2.0 * sd / 1000f64.sqrt(), "n={n} mean={mean}");
        }
    }

    #[test]
    fn exact_expectation_of_the_inversion() {
        // Sums the binomial pmf instead of sampling.
        let (p_inf, p_base, m) = (0.55, 0.2, 89u64);
        for n in 1..=10u64 {
            let w = 1.0 - (-(n as f64) / 2.0).exp();
            let pmf = statrs::distribution::Binomial::new(w * p_inf + (1.0 - w) * p_base, m).unwrap();
            let mean: f64 = (0..=m).map(|k| pmf.pmf(k) * invert_warm(k as f64 / m as f64, p_base, w).0).sum();
            assert!((mean - p_inf).abs() < 1e-3, "n={n} mean={mean}");
        }
    }

    #[test]
    fn delta_variance_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // Observed rates generated from p∞ = 0.5 so the inverted estimate sits
        // well inside the unit interval.
        for &(p_obs, p_base, w) in &[(0.29, 0.2, 0.3), (0.35, 0.2, 0.5), (0.47, 0.2, 0.9)] {
            let (var_obs, var_base, var_w) =
                (observation_variance(p_obs, 89), observation_variance(p_base, 89), 4e-4_f64);
            let (no, nb, nw) = (
                Normal::new(p_obs, var_obs.sqrt()).unwrap(),
                Normal::new(p_base, var_base.sqrt()).unwrap(),
                Normal::new(w, var_w.sqrt()).unwrap(),
            );
            let samples: Vec<f64> = (0..200_000)
                .filter_map(|_| {
                    let (a, b, c) = (no.sample(&mut rng), nb.sample(&mut rng), nw.sample(&mut rng));
                    match invert_warm(a, b, c) {
                        (x, false) => Some(x),
                        _ => None,
                    }
                })
                .collect();
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            let mc = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (samples.len() - 1) as f64;
            let delta = corrected_variance(p_obs, p_base, w, var_obs, var_base, var_w, false, 0.25);
            assert!((delta / mc - 1.0).abs() < 0.15, "delta {delta} vs mc {mc}");
        }
    }

    proptest! {
        #[test]
        fn inversion_stays_in_the_unit_interval(p in 0.0..=1.0f64, b in 0.0..=1.0f64, w in 0.0..=1.0f64) {
            let (x, _) = invert_warm(p, b, w);
            prop_assert!((0.0..=1.0).contains(&x));
        }

        #[test]
        fn variance_is_nonincreasing_in_w(
            p in 0.0..=1.0f64, b in 0.0..=1.0f64,
            w1 in 0.01..=1.0f64, w2 in 0.01..=1.0f64,
            vo in 0.0..0.1f64, vb in 0.0..0.1f64, vw in 0.0..0.1f64,
            clipped in any::<bool>(),
        ) {
            let (lo, hi) = if w1 <= w2 { (w1, w2) } else { (w2, w1) };
            let a = corrected_variance(p, b, lo, vo, vb, vw, clipped, 0.25);
            let c = corrected_variance(p, b, hi, vo, vb, vw, clipped, 0.25);
            prop_assert!(c <= a * (1.0 + 1e-12));
        }

        #[test]
        fn warm_curves_are_monotone(kappa in 0.01..100.0f64, n in 0u64..1000) {
            let c = WarmCurve::with_kappa(kappa);
            prop_assert_eq!(c.at(0), 0.0);
            prop_assert!(c.at(n) <= c.at(n + 1) && c.at(n + 1) <= 1.0);
        }
    }
}
