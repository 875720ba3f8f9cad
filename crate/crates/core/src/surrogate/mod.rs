//! Block-additive surrogate with a pairwise cross-block residual.
//!
//! Each block contributes a normalized linear kernel on its ±1 latent
//! coordinates, `K_ℓ(c, c') = ⟨z_ℓ, z'_ℓ⟩ / d_ℓ`, and the full kernel is
//! `Σ α_ℓ² K_ℓ + α_×² Σ_{ℓ<ℓ'} K_ℓ K_ℓ'`. Both terms have explicit finite
//! feature maps, so fitting and prediction happen in weight space.

mod cost;

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvaluationRecord;
use crate::flagspace::{Configuration, FlagSpace};

pub use cost::{fit_cost_model, CostModel};

/// Ridge penalties on the main-effect and cross-block feature groups.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalties {
    pub main: f64,
    pub cross: f64,
}

impl Default for Penalties {
    fn default() -> Self {
        Penalties { main: 1e-2, cross: 10.0 }
    }
}

/// Kernel scales: one per block plus the shared cross-block scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    pub main: Vec<f64>,
    pub cross: f64,
}

/// Latent coordinate ranges per block.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    coords: Vec<Vec<usize>>,
}

impl BlockLayout {
    pub fn new(space: &FlagSpace) -> Self {
        let mut offsets = Vec::with_capacity(space.len());
        let mut at = 0;
        for f in space.flags() {
            offsets.push(at);
            at += f.kind.latent_dim();
        }
        let coords = space
            .blocks()
            .iter()
            .map(|b| b.members.iter().flat_map(|&i| offsets[i]..offsets[i] + space.flag(i).kind.latent_dim()).collect())
            .collect();
        BlockLayout { coords }
    }

    pub fn blocks(&self) -> usize {
        self.coords.len()
    }

    /// Per-block unit-norm vectors `z_ℓ / √d_ℓ`.
    fn normalized(&self, latent: &[f64]) -> Vec<Vec<f64>> {
        self.coords
            .iter()
            .map(|c| {
                let s = (c.len() as f64).sqrt();
                c.iter().map(|&j| latent[j] / s).collect()
            })
            .collect()
    }

    /// Block kernels `K_ℓ(a, b)`.
    pub fn block_kernels(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        self.coords.iter().map(|c| c.iter().map(|&j| a[j] * b[j]).sum::<f64>() / c.len() as f64).collect()
    }

    fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let l = self.blocks();
        (0..l).flat_map(move |a| (a + 1..l).map(move |b| (a, b)))
    }

    /// Main-effect features for every block, then every cross product.
    fn raw_features(&self, latent: &[f64]) -> Vec<f64> {
        let psi = self.normalized(latent);
        let mut out: Vec<f64> = psi.iter().flatten().copied().collect();
        for (a, b) in self.pairs() {
            for x in &psi[a] {
                for y in &psi[b] {
                    out.push(x * y);
                }
            }
        }
        out
    }

    /// Features measured from the anchor's, so the model equals the prior
    /// mean there.
    fn features(&self, latent: &[f64], anchor: &[f64]) -> Vec<f64> {
        let mut f = self.raw_features(latent);
        for (x, a) in f.iter_mut().zip(anchor) {
            *x -= a;
        }
        f
    }

    /// Group of each feature: block index for main effects, `L` for cross.
    fn groups(&self) -> Vec<usize> {
        let l = self.blocks();
        let mut g: Vec<usize> =
            self.coords.iter().enumerate().flat_map(|(i, c)| std::iter::repeat_n(i, c.len())).collect();
        for (a, b) in self.pairs() {
            g.extend(std::iter::repeat_n(l, self.coords[a].len() * self.coords[b].len()));
        }
        g
    }
}

/// `k(c, c')` under the given scales.
pub fn kernel(a: &Configuration, b: &Configuration, space: &FlagSpace, scales: &Scales) -> Result<f64> {
    let layout = BlockLayout::new(space);
    let (za, zb) = (space.encode(a)?, space.encode(b)?);
    Ok(kernel_latent(&layout, &za, &zb, scales))
}

pub(crate) fn kernel_latent(layout: &BlockLayout, a: &[f64], b: &[f64], scales: &Scales) -> f64 {
    let k = layout.block_kernels(a, b);
    let main: f64 = k.iter().zip(&scales.main).map(|(k, s)| k * s).sum();
    let cross: f64 = layout.pairs().map(|(x, y)| k[x] * k[y]).sum();
    main + scales.cross * cross
}

/// One training target for the surrogate.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub config: Configuration,
    pub target: f64,
    pub variance: f64,
}

impl Observation {
    /// The corrected target of an informative record.
    pub fn from_record(record: &EvaluationRecord) -> Option<Self> {
        let c = record.correction?;
        (!c.uninformative).then(|| Observation {
            config: record.config.clone(),
            target: c.target,
            variance: c.variance,
        })
    }
}

/// Posterior mean and standard deviation of the latent pass rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub sd: f64,
}

impl Prediction {
    /// The mean clamped to [0, 1], for reporting.
    pub fn reported(&self) -> f64 {
        self.mean.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone)]
pub struct Surrogate {
    space: FlagSpace,
    layout: BlockLayout,
    scales: Scales,
    penalties: Penalties,
    prior_mean: f64,
    /// Baseline features; the prior mean holds exactly there.
    anchor: Vec<f64>,
    ridge_weights: Vec<f64>,
    /// Retained features and their prior standard deviations.
    kept: Vec<usize>,
    prior_sd: Vec<f64>,
    /// Posterior of the whitened weights `u = β / α`.
    post_mean: DVector<f64>,
    post_chol: Cholesky<f64, nalgebra::Dyn>,
    observations: Vec<Observation>,
}

/// Fits scales by weighted ridge regression and builds the posterior.
pub fn fit(
    observations: &[Observation],
    space: &FlagSpace,
    penalties: Penalties,
    prior_mean: f64,
) -> Result<Surrogate> {
    validate(observations)?;
    let obs = canonical(observations);
    let layout = BlockLayout::new(space);
    let groups = layout.groups();
    let l = layout.blocks();
    let (phi, y) = design(&layout, space, &obs, prior_mean)?;
    let n = obs.len();

    // Weighted ridge with weights ∝ 1/σ², normalized to sum to one.
    let precision: Vec<f64> = obs.iter().map(|o| 1.0 / o.variance).collect();
    let total: f64 = precision.iter().sum();
    let w = DVector::from_iterator(n, precision.iter().map(|p| p / total));
    let mut wphi = phi.clone();
    for (i, mut row) in wphi.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let mut a = phi.transpose() * &wphi;
    for (j, &g) in groups.iter().enumerate() {
        a[(j, j)] += if g == l { penalties.cross } else { penalties.main };
    }
    let rhs = wphi.transpose() * &y;
    let beta = Cholesky::new(a)
        .ok_or_else(|| Error::InvalidConfig("ridge system is not positive definite".into()))?
        .solve(&rhs);

    let mut main = vec![0.0; l];
    let mut cross = 0.0;
    for (j, &g) in groups.iter().enumerate() {
        if g == l {
            cross += beta[j] * beta[j];
        } else {
            main[g] += beta[j] * beta[j];
        }
    }
    let mut s = build(layout, space, obs, phi, y, Scales { main, cross }, prior_mean)?;
    s.penalties = penalties;
    s.ridge_weights = beta.iter().copied().collect();
    Ok(s)
}

/// Conditions the surrogate on `observations` under fixed scales, skipping
/// the ridge step.
pub fn condition(
    observations: &[Observation],
    space: &FlagSpace,
    scales: Scales,
    prior_mean: f64,
) -> Result<Surrogate> {
    validate(observations)?;
    let layout = BlockLayout::new(space);
    if scales.main.len() != layout.blocks() || scales.main.iter().chain([&scales.cross]).any(|s| !(*s >= 0.0)) {
        return Err(Error::InvalidConfig("scales must be nonnegative, one per block".into()));
    }
    let obs = canonical(observations);
    let (phi, y) = design(&layout, space, &obs, prior_mean)?;
    build(layout, space, obs, phi, y, scales, prior_mean)
}

fn validate(observations: &[Observation]) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::EmptyHistory);
    }
    if observations.iter().any(|o| !(o.variance > 0.0) || !o.target.is_finite()) {
        return Err(Error::InvalidConfig("observation variances must be positive".into()));
    }
    Ok(())
}

/// Canonical order makes every fit independent of record order.
fn canonical(observations: &[Observation]) -> Vec<Observation> {
    let mut obs = observations.to_vec();
    obs.sort_by(|a, b| {
        a.config.cmp(&b.config).then(a.target.total_cmp(&b.target)).then(a.variance.total_cmp(&b.variance))
    });
    obs
}

/// Raw features of the baseline configuration.
fn anchor(layout: &BlockLayout, space: &FlagSpace) -> Result<Vec<f64>> {
    Ok(layout.raw_features(&space.encode(&space.baseline_config())?))
}

fn design(
    layout: &BlockLayout,
    space: &FlagSpace,
    obs: &[Observation],
    prior_mean: f64,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let p = layout.groups().len();
    let origin = anchor(layout, space)?;
    let mut phi = DMatrix::zeros(obs.len(), p);
    for (i, o) in obs.iter().enumerate() {
        let f = layout.features(&space.encode(&o.config)?, &origin);
        phi.row_mut(i).copy_from_slice(&f);
    }
    let y = DVector::from_iterator(obs.len(), obs.iter().map(|o| o.target - prior_mean));
    Ok((phi, y))
}

fn build(
    layout: BlockLayout,
    space: &FlagSpace,
    obs: Vec<Observation>,
    phi: DMatrix<f64>,
    y: DVector<f64>,
    scales: Scales,
    prior_mean: f64,
) -> Result<Surrogate> {
    let groups = layout.groups();
    let (post_mean, post_chol, kept, prior_sd) = posterior(&phi, &y, &obs, &groups, &scales, layout.blocks())?;
    Ok(Surrogate {
        anchor: anchor(&layout, space)?,
        space: space.clone(),
        layout,
        scales,
        penalties: Penalties::default(),
        prior_mean,
        ridge_weights: Vec::new(),
        kept,
        prior_sd,
        post_mean,
        post_chol,
        observations: obs,
    })
}

type Posterior = (DVector<f64>, Cholesky<f64, nalgebra::Dyn>, Vec<usize>, Vec<f64>);

fn posterior(
    phi: &DMatrix<f64>,
    y: &DVector<f64>,
    obs: &[Observation],
    groups: &[usize],
    scales: &Scales,
    l: usize,
) -> Result<Posterior> {
    let scale_of = |g: usize| if g == l { scales.cross } else { scales.main[g] };
    let mut kept: Vec<usize> = (0..groups.len()).filter(|&j| scale_of(groups[j]) > 0.0).collect();
    let floor = kept.is_empty();
    if floor {
        // Nothing was learned; fall back to a faint isotropic prior so the
        // posterior still reports uncertainty.
        kept = (0..groups.len()).collect();
    }
    let prior_sd: Vec<f64> = kept.iter().map(|&j| if floor { 1e-4 } else { scale_of(groups[j]).sqrt() }).collect();
    let n = obs.len();
    let k = kept.len();
    // Whitened, noise-scaled design: rows φ̃ᵢ / σᵢ with φ̃ = α ∘ φ.
    let mut x = DMatrix::zeros(n, k);
    let mut t = DVector::zeros(n);
    for i in 0..n {
        let s = obs[i].variance.sqrt();
        for (c, &j) in kept.iter().enumerate() {
            x[(i, c)] = phi[(i, j)] * prior_sd[c] / s;
        }
        t[i] = y[i] / s;
    }
    let mut precision = x.transpose() * &x;
    for d in 0..k {
        precision[(d, d)] += 1.0;
    }
    let chol = Cholesky::new(precision)
        .ok_or_else(|| Error::InvalidConfig("posterior precision is not positive definite".into()))?;
    let mean = chol.solve(&(x.transpose() * t));
    Ok((mean, chol, kept, prior_sd))
}

impl Surrogate {
    pub fn scales(&self) -> &Scales {
        &self.scales
    }

    pub fn penalties(&self) -> Penalties {
        self.penalties
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn space(&self) -> &FlagSpace {
        &self.space
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    /// Fitted ridge weights over the full feature map.
    pub fn ridge_weights(&self) -> &[f64] {
        &self.ridge_weights
    }

    /// Variance of the prediction at `c` before conditioning on data. Zero
    /// at the baseline, growing with distance from it.
    pub fn prior_variance(&self, c: &Configuration) -> f64 {
        let f = self.centered(c);
        let l = self.layout.blocks();
        self.layout
            .groups()
            .iter()
            .zip(&f)
            .map(|(&g, x)| x * x * if g == l { self.scales.cross } else { self.scales.main[g] })
            .sum()
    }

    fn centered(&self, c: &Configuration) -> Vec<f64> {
        let latent = self.space.encode(c).expect("configuration from the fitted space");
        self.layout.features(&latent, &self.anchor)
    }

    pub fn kernel(&self, a: &Configuration, b: &Configuration) -> f64 {
        let za = self.space.encode(a).expect("configuration from the fitted space");
        let zb = self.space.encode(b).expect("configuration from the fitted space");
        kernel_latent(&self.layout, &za, &zb, &self.scales)
    }

    pub fn predict(&self, c: &Configuration) -> Prediction {
        let f = self.centered(c);
        let v = DVector::from_iterator(self.kept.len(), self.kept.iter().zip(&self.prior_sd).map(|(&j, s)| f[j] * s));
        let mean = self.prior_mean + v.dot(&self.post_mean);
        let var = v.dot(&self.post_chol.solve(&v)).max(0.0);
        Prediction { mean, sd: var.sqrt() }
    }

    /// Per-block scales sorted descending, then the cross scale, each with a
    /// copy normalized to sum to one over all entries.
    pub fn block_anova(&self) -> Anova {
        let names: Vec<String> = self.space.blocks().iter().map(|b| b.name.clone()).collect();
        anova_table(&names, &self.scales)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaEntry {
    pub name: String,
    pub raw: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anova {
    pub main: Vec<AnovaEntry>,
    /// Absent for single-block spaces.
    pub cross: Option<AnovaEntry>,
}

pub fn anova_table(names: &[String], scales: &Scales) -> Anova {
    let has_cross = names.len() > 1;
    let total: f64 = scales.main.iter().sum::<f64>() + if has_cross { scales.cross } else { 0.0 };
    let norm = |x: f64| if total > 0.0 { x / total } else { 0.0 };
    let mut main: Vec<AnovaEntry> = names
        .iter()
        .zip(&scales.main)
        .map(|(n, &raw)| AnovaEntry { name: n.clone(), raw, normalized: norm(raw) })
        .collect();
    main.sort_by(|a, b| b.raw.total_cmp(&a.raw).then_with(|| a.name.cmp(&b.name)));
    let cross =
        has_cross.then(|| AnovaEntry { name: "cross".into(), raw: scales.cross, normalized: norm(scales.cross) });
    Anova { main, cross }
}

impl Anova {
    pub fn render(&self) -> String {
        let mut parts: Vec<String> = self.main.iter().map(|e| format!("{} {:.3}", e.name, e.raw)).collect();
        if let Some(c) = &self.cross {
            parts.push(format!("cross {:.3}", c.raw));
        }
        parts.join(", ")
    }

    pub fn as_map(&self) -> BTreeMap<String, f64> {
        self.main.iter().chain(self.cross.iter()).map(|e| (e.name.clone(), e.raw)).collect()
    }
}
