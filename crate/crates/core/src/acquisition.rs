//! Cost-aware batch acquisition: Monte-Carlo expected hypervolume
//! improvement over (pass rate, per-task cost), a posterior chance
//! constraint, and greedy diverse batches chosen across fidelities.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::flagspace::Configuration;
use crate::surrogate::{CostModel, Prediction, Surrogate};
use crate::trustregion::TrustRegion;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub mean: f64,
    /// Per-task cost.
    pub cost: f64,
    pub config: Configuration,
}

/// Non-dominated points (high mean, low cost) measured at one fidelity,
/// sorted by ascending cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    pub fidelity: usize,
    /// (mean, cost) corner the hypervolume is measured against.
    pub reference: (f64, f64),
    points: Vec<FrontPoint>,
}

impl ParetoFront {
    pub fn new(fidelity: usize, reference: (f64, f64), candidates: impl IntoIterator<Item = FrontPoint>) -> Self {
        let mut all: Vec<FrontPoint> = candidates.into_iter().collect();
        all.sort_by(|a, b| {
            a.cost.total_cmp(&b.cost).then(b.mean.total_cmp(&a.mean)).then_with(|| a.config.cmp(&b.config))
        });
        let mut points: Vec<FrontPoint> = Vec::new();
        for p in all {
            if points.last().is_none_or(|q| p.mean > q.mean) {
                points.push(p);
            }
        }
        ParetoFront { fidelity, reference, points }
    }

    pub fn empty(fidelity: usize, reference: (f64, f64)) -> Self {
        ParetoFront { fidelity, reference, points: Vec::new() }
    }

    pub fn points(&self) -> &[FrontPoint] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn hypervolume(&self) -> f64 {
        let (r, big_r) = self.reference;
        let mut hv = 0.0;
        let mut lo = r;
        // Walking by ascending cost means ascending mean too.
        for p in &self.points {
            if p.mean > lo {
                hv += (p.mean - lo) * (big_r - p.cost).max(0.0);
                lo = p.mean;
            }
        }
        // Each slab (lo_prev, mean_i] is covered from the cheapest point
        // reaching it, which is point i.
        hv
    }

    /// Area gained by adding (mean, cost) to the front.
    pub fn improvement(&self, mean: f64, cost: f64) -> f64 {
        let (r, big_r) = self.reference;
        if mean <= r || cost >= big_r {
            return 0.0;
        }
        let mut gain = 0.0;
        let mut lo = r;
        for p in &self.points {
            if p.mean <= lo {
                continue;
            }
            let hi = p.mean.min(mean);
            if hi > lo {
                gain += (hi - lo) * (p.cost.min(big_r) - cost).max(0.0);
            }
            lo = p.mean;
            if lo >= mean {
                return gain;
            }
        }
        gain + (mean - lo) * (big_r - cost)
    }
}

/// Stratified standard-normal pairs, one stratum per sample in each axis.
pub fn normal_draws(samples: usize, seed: u64) -> Vec<(f64, f64)> {
    let n = samples.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std = Normal::standard();
    let mut axis = || {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        strata
            .into_iter()
            .map(|k| {
                let u = (k as f64 + rng.random::<f64>()) / n as f64;
                std.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
            })
            .collect::<Vec<f64>>()
    };
    let a = axis();
    let b = axis();
    a.into_iter().zip(b).collect()
}

fn ehvi_with(pred: Prediction, cost: f64, cost_sd: f64, front: &ParetoFront, draws: &[(f64, f64)]) -> f64 {
    let total: f64 =
        draws.iter().map(|&(zm, zc)| front.improvement(pred.mean + pred.sd * zm, (cost + cost_sd * zc).max(0.0))).sum();
    total / draws.len() as f64
}

/// Monte-Carlo expected hypervolume improvement of evaluating `candidate`.
pub fn ehvi(
    candidate: &Configuration,
    s: &Surrogate,
    cost_model: &CostModel,
    front: &ParetoFront,
    samples: usize,
    seed: u64,
) -> f64 {
    let draws = normal_draws(samples, seed);
    let cost = cost_model.predict(s.space(), candidate);
    ehvi_with(s.predict(candidate), cost, cost_model.residual_sd, front, &draws)
}

/// Lower-credible-bound acceptance against the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Safety {
    pub r0: f64,
    pub delta: f64,
    pub eta: f64,
}

impl Safety {
    pub fn z(&self) -> f64 {
        Normal::standard().inverse_cdf(1.0 - self.eta)
    }

    pub fn lower_bound(&self, p: Prediction) -> f64 {
        p.mean - self.z() * p.sd
    }

    pub fn accepts(&self, p: Prediction) -> bool {
        self.lower_bound(p) >= self.r0 - self.delta
    }
}

pub fn safety_filter(candidates: &[Configuration], s: &Surrogate, safety: &Safety) -> Vec<Configuration> {
    candidates.iter().filter(|c| safety.accepts(s.predict(c))).cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub q: usize,
    pub samples: usize,
    pub d_div: f64,
    pub pool_cap: usize,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        AcquisitionParams { q: 1, samples: 512, d_div: 2.0, pool_cap: 1024 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub configs: Vec<Configuration>,
    pub fidelity: usize,
    /// Diversity-adjusted EHVI of each pick.
    pub ehvi: Vec<f64>,
    /// Summed adjusted EHVI over summed expected cost.
    pub score: f64,
    /// High-side cost bound used against the remaining budget.
    pub cost_bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Shortfall {
    /// No safe, unevaluated configuration in the region.
    EmptyPool,
    /// Even one evaluation at the smallest fidelity would overrun the budget.
    Infeasible { cheapest: f64 },
}

/// Candidate scored for one fidelity.
#[derive(Debug, Clone)]
pub struct Scored {
    pub config: Configuration,
    pub ehvi: f64,
    /// Expected cost of evaluating at this fidelity.
    pub cost: f64,
}

/// Greedy picks by ehvi/cost, each damped by min(1, d/d_div) where d is
/// the Hamming distance to the nearest earlier pick. Ties go to the
/// smaller configuration. Returns pool indices and damped EHVI.
pub fn greedy_diverse(pool: &[Scored], q: usize, d_div: f64) -> Vec<(usize, f64)> {
    let mut picked: Vec<(usize, f64)> = Vec::new();
    while picked.len() < q.min(pool.len()) {
        let mut best: Option<(usize, f64, f64)> = None;
        for (i, cand) in pool.iter().enumerate() {
            if picked.iter().any(|&(j, _)| j == i) {
                continue;
            }
            let damp = picked
                .iter()
                .map(|&(j, _)| (cand.config.hamming(&pool[j].config) as f64 / d_div).min(1.0))
                .fold(1.0, f64::min);
            let ratio = damp * cand.ehvi / cand.cost.max(f64::MIN_POSITIVE);
            let better = match best {
                None => true,
                Some((b, r, _)) => ratio > r || (ratio == r && cand.config < pool[b].config),
            };
            if better {
                best = Some((i, ratio, damp * cand.ehvi));
            }
        }
        let (i, _, e) = best.expect("pool has unpicked candidates");
        picked.push((i, e));
    }
    picked
}

/// Chooses a batch and fidelity for one region. `fronts` maps each
/// fidelity to the front measured there; `evaluated` lists configurations
/// already measured per fidelity, which are left out of that fidelity's pool.
#[allow(clippy::too_many_arguments)]
pub fn select_batch(
    region: &TrustRegion,
    s: &Surrogate,
    cost_model: &CostModel,
    fronts: &BTreeMap<usize, ParetoFront>,
    fidelities: &[usize],
    evaluated: &BTreeMap<usize, BTreeSet<Configuration>>,
    params: &AcquisitionParams,
    safety: &Safety,
    remaining: f64,
    seed: u64,
) -> Result<Batch, Shortfall> {
    let space = s.space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = space.pin(&region.center);
    let sampled = space.sample_ball(&center, region.radius, params.pool_cap, &mut rng);
    let pool: Vec<Configuration> = sampled.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    let safe = safety_filter(&pool, s, safety);

    let draws = normal_draws(params.samples, rng.random());
    let predicted: Vec<(Prediction, f64)> =
        safe.par_iter().map(|c| (s.predict(c), cost_model.predict(space, c))).collect();

    let none = BTreeSet::new();
    let mut options: Vec<Batch> = Vec::new();
    let mut any_pool = false;
    for &m in fidelities {
        let done = evaluated.get(&m).unwrap_or(&none);
        let front = fronts.get(&m).cloned().unwrap_or_else(|| ParetoFront::empty(m, (0.0, 0.0)));
        let scored: Vec<Scored> = safe
            .par_iter()
            .zip(&predicted)
            .filter(|(c, _)| !done.contains(*c))
            .map(|(c, &(pred, cost))| Scored {
                config: c.clone(),
                ehvi: ehvi_with(pred, cost, cost_model.residual_sd, &front, &draws),
                cost: m as f64 * cost,
            })
            .collect();
        if scored.is_empty() {
            continue;
        }
        any_pool = true;
        // Shrink q until the batch fits the remaining budget.
        for q in (1..=params.q).rev() {
            let picks = greedy_diverse(&scored, q, params.d_div);
            let bound: f64 = picks.iter().map(|&(i, _)| cost_model.upper_bound(space, &scored[i].config, m)).sum();
            if bound > remaining {
                continue;
            }
            let gain: f64 = picks.iter().map(|&(_, e)| e).sum();
            let cost: f64 = picks.iter().map(|&(i, _)| scored[i].cost).sum();
            options.push(Batch {
                configs: picks.iter().map(|&(i, _)| scored[i].config.clone()).collect(),
                fidelity: m,
                ehvi: picks.iter().map(|&(_, e)| e).collect(),
                score: gain / cost.max(f64::MIN_POSITIVE),
                cost_bound: bound,
            });
            break;
        }
    }
    if !any_pool {
        return Err(Shortfall::EmptyPool);
    }
    // Best ratio wins; ties go to the smaller fidelity, then the larger batch.
    options
        .into_iter()
        .reduce(|a, b| {
            let keep_a = a.score > b.score
                || (a.score == b.score
                    && (a.fidelity < b.fidelity || (a.fidelity == b.fidelity && a.configs.len() >= b.configs.len())));
            if keep_a {
                a
            } else {
                b
            }
        })
        .ok_or_else(|| {
            let m = fidelities.iter().copied().min().unwrap_or(1);
            Shortfall::Infeasible { cheapest: cost_model.upper_bound(space, &center, m) }
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flagspace::FlagSpace;
    use crate::surrogate::{condition, Observation, Scales};
    use crate::test_support::harness9;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use statrs::distribution::Continuous;

    fn cfg(bits: &[u32]) -> Configuration {
        Configuration::from_indices(bits.to_vec())
    }

    fn point(mean: f64, cost: f64, tag: u32) -> FrontPoint {
        FrontPoint { mean, cost, config: cfg(&[tag]) }
    }

    fn flat_cost(c: f64) -> CostModel {
        CostModel { intercept: c, coef: Vec::new(), residual_sd: 0.0, task_sd: 0.0 }
    }

    /// Surrogate conditioned on one near-uninformative point, so predictions
    /// sit at the prior.
    fn prior_only(space: &FlagSpace, scales: Scales, mean: f64) -> Surrogate {
        let obs = Observation { config: space.default_config(), target: mean, variance: 1e12 };
        condition(&[obs], space, scales, mean).unwrap()
    }

    #[test]
    fn rectangle_gain() {
        let front = ParetoFront::new(8, (0.0, 2.0), [point(0.2, 1.0, 0)]);
        assert_relative_eq!(front.improvement(0.4, 1.0), 0.2, epsilon = 1e-15);
        assert_relative_eq!(front.hypervolume(), 0.2, epsilon = 1e-15);
    }

    #[test]
    fn dominated_point_gains_nothing() {
        let front = ParetoFront::new(8, (0.0, 2.0), [point(0.5, 0.5, 0)]);
        assert_eq!(front.improvement(0.4, 0.9), 0.0);
        assert_eq!(front.improvement(0.5, 0.5), 0.0);
        let space = harness9();
        let s = prior_only(&space, Scales { main: vec![0.0; 6], cross: 0.0 }, 0.4);
        let e = ehvi(&space.default_config(), &s, &flat_cost(0.9), &front, 1000, 3);
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn dominated_inputs_are_dropped() {
        let front = ParetoFront::new(
            8,
            (0.0, 2.0),
            [point(0.3, 1.0, 0), point(0.2, 1.5, 1), point(0.5, 1.5, 2), point(0.5, 1.2, 3), point(0.1, 0.2, 4)],
        );
        let kept: Vec<(f64, f64)> = front.points().iter().map(|p| (p.mean, p.cost)).collect();
        assert_eq!(kept, vec![(0.1, 0.2), (0.3, 1.0), (0.5, 1.2)]);
        // 0.1·1.8 + 0.2·1.0 + 0.2·0.8
        assert_relative_eq!(front.hypervolume(), 0.54, epsilon = 1e-12);
    }

    /// Brute-force area on a fine grid, the slow way.
    fn grid_hv(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
        let n = 400;
        let (r, big_r) = reference;
        let (top, left) = (1.0, 0.0);
        let (dy, dx) = ((top - r) / n as f64, (big_r - left) / n as f64);
        let mut area = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y = r + (i as f64 + 0.5) * dy;
                let x = left + (j as f64 + 0.5) * dx;
                if points.iter().any(|&(m, c)| m >= y && c <= x) {
                    area += dx * dy;
                }
            }
        }
        area
    }

    #[test]
    fn hypervolume_matches_grid_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let pts: Vec<(f64, f64)> = (0..5).map(|_| (rng.random::<f64>(), 2.0 * rng.random::<f64>())).collect();
            let front =
                ParetoFront::new(8, (0.0, 2.0), pts.iter().enumerate().map(|(k, &(m, c))| point(m, c, k as u32)));
            assert!((front.hypervolume() - grid_hv(&pts, (0.0, 2.0))).abs() < 0.01);
            let extra = (rng.random::<f64>(), 2.0 * rng.random::<f64>());
            let mut more = pts.clone();
            more.push(extra);
            let bigger =
                ParetoFront::new(8, (0.0, 2.0), more.iter().enumerate().map(|(k, &(m, c))| point(m, c, k as u32)));
            assert_relative_eq!(
                front.improvement(extra.0, extra.1),
                bigger.hypervolume() - front.hypervolume(),
                epsilon = 1e-12
            );
        }
    }

    /// E[(X − a)⁺] for X ~ N(m, s²).
    fn expected_excess(m: f64, s: f64, a: f64) -> f64 {
        let std = Normal::standard();
        let d = (m - a) / s;
        (m - a) * std.cdf(d) + s * std.pdf(d)
    }

    /// Exact expected gain of a Gaussian-mean, fixed-cost point against a
    /// one-point front (mean0 ≥ r).
    fn one_point_oracle(m: f64, s: f64, c: f64, mean0: f64, c0: f64, r: f64, big_r: f64) -> f64 {
        let below = (c0.min(big_r) - c).max(0.0) * (expected_excess(m, s, r) - expected_excess(m, s, mean0));
        below + (big_r - c).max(0.0) * expected_excess(m, s, mean0)
    }

    #[test]
    fn monte_carlo_matches_closed_form() {
        let space = harness9();
        // One flip inside the first block; the baseline itself has no prior
        // variance.
        let mut c = space.baseline_config();
        c.set(space.blocks()[0].members[0], 1);
        let unit =
            prior_only(&space, Scales { main: vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0], cross: 0.0 }, 0.0).prior_variance(&c);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (mut k, mut checked) = (0u64, 0);
        while checked < 20 {
            k += 1;
            let m = rng.random_range(0.1..0.6);
            let sd = rng.random_range(0.02..0.2);
            let cost = rng.random_range(0.2..1.6);
            let mean0 = rng.random_range(0.1..0.5);
            let c0 = rng.random_range(0.2..1.8);
            let front = ParetoFront::new(8, (0.0, 2.0), [point(mean0, c0, 0)]);
            // A single active block with scale sd² gives prior sd = sd.
            let s = prior_only(&space, Scales { main: vec![sd * sd / unit, 0.0, 0.0, 0.0, 0.0, 0.0], cross: 0.0 }, m);
            let pred = s.predict(&c);
            assert_relative_eq!(pred.sd, sd, max_relative = 1e-6);
            let exact = one_point_oracle(pred.mean, pred.sd, cost, mean0, c0, 0.0, 2.0);
            // Redraw instances whose expected gain is negligible.
            if exact < 1e-3 {
                continue;
            }
            checked += 1;
            let mc = ehvi(&c, &s, &flat_cost(cost), &front, 10_000, k);
            assert!((mc - exact).abs() <= 0.02 * exact, "instance {k}: mc {mc} exact {exact}");
        }
    }

    #[test]
    fn safety_examples() {
        let at = |mean, sd| Prediction { mean, sd };
        let s = Safety { r0: 0.17, delta: 0.05, eta: 0.1 };
        assert_relative_eq!(s.z(), 1.2815515655446004, epsilon = 1e-9);
        assert!(s.accepts(at(0.20, 0.05)));
        assert_relative_eq!(s.lower_bound(at(0.20, 0.05)), 0.1359, epsilon = 1e-4);
        assert!(s.accepts(at(0.17, 0.0)));
        assert!(!s.accepts(at(0.17 - 0.05 - 0.01, 1e-9)));
    }

    #[test]
    fn diversity_trace() {
        let a = Scored { config: cfg(&[0, 0, 0, 0]), ehvi: 1.0, cost: 1.0 };
        let near = Scored { config: cfg(&[1, 0, 0, 0]), ehvi: 1.0, cost: 1.0 };
        let far = Scored { config: cfg(&[0, 1, 1, 0]), ehvi: 0.8, cost: 1.0 };
        let picks = greedy_diverse(&[a.clone(), near.clone(), far.clone()], 2, 2.0);
        // `near` drops to 0.5 after `a`; `far` keeps 0.8.
        assert_eq!(picks.iter().map(|p| p.0).collect::<Vec<_>>(), vec![0, 2]);
        assert_relative_eq!(picks[1].1, 0.8);
        // Without the alternative the near twin is taken at half weight.
        let picks = greedy_diverse(&[a, near], 2, 2.0);
        assert_relative_eq!(picks[1].1, 0.5);
    }

    fn setup() -> (FlagSpace, Surrogate, CostModel, TrustRegion) {
        let space = harness9();
        let design = space.sobol_init(12, 2).unwrap().configs;
        let obs: Vec<Observation> = design
            .iter()
            .enumerate()
            .map(|(i, c)| Observation { config: c.clone(), target: 0.15 + 0.02 * (i % 5) as f64, variance: 4e-3 })
            .collect();
        let s = condition(&obs, &space, Scales { main: vec![0.003; 6], cross: 0.0005 }, 0.17).unwrap();
        let cost = CostModel {
            intercept: 1.0,
            coef: (0..9).map(|i| 0.02 * (i as f64 + 1.0)).collect(),
            residual_sd: 0.05,
            task_sd: 0.1,
        };
        let region = TrustRegion {
            id: 0,
            center: space.default_config(),
            radius: 2,
            success_streak: 0,
            failure_streak: 0,
            alive: true,
            best: 0.2,
        };
        (space, s, cost, region)
    }

    fn fronts_for(s: &Surrogate, cost: &CostModel, ms: &[usize]) -> BTreeMap<usize, ParetoFront> {
        let space = s.space();
        let base = space.default_config();
        ms.iter()
            .map(|&m| {
                let p =
                    FrontPoint { mean: s.predict(&base).mean, cost: cost.predict(space, &base), config: base.clone() };
                (m, ParetoFront::new(m, (0.0, 3.0), [p]))
            })
            .collect()
    }

    fn loose() -> Safety {
        Safety { r0: 0.17, delta: 0.5, eta: 0.1 }
    }

    #[test]
    fn equal_gains_pick_the_smallest_fidelity() {
        let (_, s, cost, region) = setup();
        let ms = [8, 22, 44, 89];
        let fronts = fronts_for(&s, &cost, &ms);
        let params = AcquisitionParams { q: 2, samples: 256, ..Default::default() };
        let b = select_batch(&region, &s, &cost, &fronts, &ms, &BTreeMap::new(), &params, &loose(), 1e9, 7).unwrap();
        assert_eq!(b.fidelity, 8);
        assert_eq!(b.configs.len(), 2);
    }

    #[test]
    fn single_pick_is_the_pool_argmax() {
        let (space, s, cost, region) = setup();
        let fronts = fronts_for(&s, &cost, &[8]);
        let params = AcquisitionParams { q: 1, samples: 256, ..Default::default() };
        let b = select_batch(&region, &s, &cost, &fronts, &[8], &BTreeMap::new(), &params, &loose(), 1e9, 11).unwrap();

        // The radius-2 ball of nine flags has 46 members, all in the pool.
        let mut pool = vec![region.center.clone()];
        pool.extend(space.hamming_neighbors(&region.center, 2));
        assert_eq!(pool.len(), 46);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let _ = space.sample_ball(&region.center, 2, params.pool_cap, &mut rng);
        let draws = normal_draws(params.samples, rng.random());
        let best = pool
            .iter()
            .map(|c| {
                let e = ehvi_with(s.predict(c), cost.predict(&space, c), cost.residual_sd, &fronts[&8], &draws);
                (e / (8.0 * cost.predict(&space, c)), c)
            })
            .max_by(|a, b| a.0.total_cmp(&b.0).then_with(|| b.1.cmp(a.1)))
            .unwrap();
        assert_eq!(&b.configs[0], best.1);
    }

    #[test]
    fn batches_respect_safety_pins_and_budget() {
        let (mut space, _, cost, mut region) = setup();
        space.exclude(0, 0, crate::flagspace::ExclusionReason::Silent);
        let design = space.sobol_init(12, 2).unwrap().configs;
        let obs: Vec<Observation> = design
            .iter()
            .enumerate()
            .map(|(i, c)| Observation { config: c.clone(), target: 0.1 + 0.03 * (i % 4) as f64, variance: 4e-3 })
            .collect();
        let s = condition(&obs, &space, Scales { main: vec![0.003; 6], cross: 0.0005 }, 0.17).unwrap();
        region.center.set(0, 1);
        let tight = Safety { r0: 0.17, delta: 0.05, eta: 0.1 };
        let fronts = fronts_for(&s, &cost, &[8, 22]);
        let params = AcquisitionParams { q: 3, samples: 128, ..Default::default() };
        match select_batch(&region, &s, &cost, &fronts, &[8, 22], &BTreeMap::new(), &params, &tight, 1e9, 5) {
            Ok(b) => {
                for c in &b.configs {
                    assert!(tight.accepts(s.predict(c)));
                    assert_eq!(c.get(0), 0);
                }
            }
            Err(e) => assert_eq!(e, Shortfall::EmptyPool),
        }

        // A budget for roughly one cheap evaluation shrinks the batch.
        let one = cost.upper_bound(&space, &space.default_config(), 8) * 1.5;
        let b =
            select_batch(&region, &s, &cost, &fronts, &[8, 22], &BTreeMap::new(), &params, &loose(), one, 5).unwrap();
        assert_eq!((b.configs.len(), b.fidelity), (1, 8));
        assert!(b.cost_bound <= one);
        let none = select_batch(&region, &s, &cost, &fronts, &[8, 22], &BTreeMap::new(), &params, &loose(), 0.1, 5);
        assert!(matches!(none, Err(Shortfall::Infeasible { .. })));
    }

    #[test]
    fn evaluated_configs_leave_the_pool() {
        let (space, s, cost, mut region) = setup();
        region.radius = 1;
        let mut all = BTreeSet::new();
        all.insert(region.center.clone());
        all.extend(space.hamming_neighbors(&region.center, 1));
        let evaluated = BTreeMap::from([(8, all)]);
        let fronts = fronts_for(&s, &cost, &[8]);
        let params = AcquisitionParams::default();
        let r = select_batch(&region, &s, &cost, &fronts, &[8], &evaluated, &params, &loose(), 1e9, 1);
        assert_eq!(r, Err(Shortfall::EmptyPool));
    }

    proptest! {
        #[test]
        fn enlarging_the_front_never_raises_ehvi(
            pts in proptest::collection::vec((0.0..1.0f64, 0.0..2.0f64), 1..6),
            extra in (0.0..1.0f64, 0.0..2.0f64),
            cand in (0.0..1.0f64, 0.0..2.0f64),
        ) {
            let small = ParetoFront::new(8, (0.0, 2.0), pts.iter().enumerate().map(|(k, &(m, c))| point(m, c, k as u32)));
            let mut more = pts.clone();
            more.push(extra);
            let big = ParetoFront::new(8, (0.0, 2.0), more.iter().enumerate().map(|(k, &(m, c))| point(m, c, k as u32)));
            prop_assert!(big.improvement(cand.0, cand.1) <= small.improvement(cand.0, cand.1) + 1e-12);
            prop_assert!(small.improvement(cand.0, cand.1) >= 0.0);
        }

        #[test]
        fn safety_filter_ignores_order(seed in 0u64..1000) {
            let (space, s, _, _) = setup();
            let mut pool: Vec<Configuration> = space.sobol_init(32, seed).unwrap().configs;
            let safety = Safety { r0: 0.17, delta: 0.02, eta: 0.2 };
            let a: BTreeSet<_> = safety_filter(&pool, &s, &safety).into_iter().collect();
            pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b: BTreeSet<_> = safety_filter(&pool, &s, &safety).into_iter().collect();
            prop_assert_eq!(a, b);
        }
    }
}
