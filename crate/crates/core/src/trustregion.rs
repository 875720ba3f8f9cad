//! Hamming-ball trust regions with success/failure radius dynamics, and
//! block freezing once a block's kernel scale collapses.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::flagspace::{Configuration, ExclusionReason, FlagSpace};
use crate::surrogate::Surrogate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionParams {
    pub r0: usize,
    pub r_max: usize,
    pub tau_succ: u32,
    pub tau_fail: u32,
}

impl RegionParams {
    /// Defaults for a space with `flags` searchable flags.
    pub fn for_space(flags: usize) -> Self {
        RegionParams { r0: 2, r_max: flags.max(1), tau_succ: 3, tau_fail: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustRegion {
    pub id: usize,
    pub center: Configuration,
    pub radius: usize,
    pub success_streak: u32,
    pub failure_streak: u32,
    pub alive: bool,
    /// Best corrected target observed inside the region.
    pub best: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Improved,
    NotImproved,
}

/// One region per distinct evaluated configuration, highest posterior mean
/// first, at most `m` of them. `evaluated` pairs each configuration with its
/// best corrected target so far.
pub fn init_regions(
    evaluated: &[(Configuration, f64)],
    s: &Surrogate,
    m: usize,
    params: &RegionParams,
    first_id: usize,
) -> Vec<TrustRegion> {
    let mut distinct: Vec<(Configuration, f64)> = Vec::new();
    for (c, t) in evaluated {
        match distinct.iter_mut().find(|(d, _)| d == c) {
            Some((_, best)) => *best = best.max(*t),
            None => distinct.push((c.clone(), *t)),
        }
    }
    let mut ranked: Vec<(f64, Configuration, f64)> =
        distinct.into_iter().map(|(c, t)| (s.predict(&c).mean, c, t)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    ranked
        .into_iter()
        .take(m)
        .enumerate()
        .map(|(k, (_, center, best))| TrustRegion {
            id: first_id + k,
            center,
            radius: params.r0.max(1),
            success_streak: 0,
            failure_streak: 0,
            alive: true,
            best,
        })
        .collect()
}

/// Applies one batch outcome. On improvement the center moves to the
/// batch's best point (`better`). Streaks of `tau_succ` successes double
/// the radius; streaks of `tau_fail` failures halve it; a radius below one
/// kills the region.
pub fn update_region(
    r: &TrustRegion,
    outcome: Outcome,
    better: Option<(Configuration, f64)>,
    params: &RegionParams,
) -> TrustRegion {
    let mut next = r.clone();
    if !r.alive {
        return next;
    }
    match outcome {
        Outcome::Improved => {
            next.success_streak += 1;
            next.failure_streak = 0;
            if let Some((center, best)) = better {
                next.center = center;
                next.best = best;
            }
            if next.success_streak >= params.tau_succ {
                next.radius = (next.radius * 2).min(params.r_max.max(1));
                next.success_streak = 0;
            }
        }
        Outcome::NotImproved => {
            next.failure_streak += 1;
            next.success_streak = 0;
            if next.failure_streak >= params.tau_fail {
                next.radius /= 2;
                next.failure_streak = 0;
            }
        }
    }
    if next.radius < 1 {
        next.alive = false;
    }
    next
}

/// A frozen block and the values its flags are pinned to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenBlock {
    pub block: usize,
    pub pins: Vec<(usize, u32)>,
}

/// Blocks whose scale fell below `collapse_ratio` times the largest scale
/// after at least `n_min` distinct block projections were seen. Their flags
/// are pinned to the incumbent's values. Blocks already fully pinned are
/// skipped.
pub fn freeze_blocks(
    s: &Surrogate,
    evaluated: &[Configuration],
    space: &FlagSpace,
    incumbent: &Configuration,
    n_min: usize,
    collapse_ratio: f64,
) -> Vec<FrozenBlock> {
    let main = &s.scales().main;
    let max = main.iter().copied().fold(0.0, f64::max);
    if max <= 0.0 {
        return Vec::new();
    }
    let mut out = Vec::new();
    for (b, block) in space.blocks().iter().enumerate() {
        if block.members.iter().all(|&i| space.is_excluded(i)) {
            continue;
        }
        if main[b] >= collapse_ratio * max {
            continue;
        }
        let projections: BTreeSet<Vec<u32>> =
            evaluated.iter().map(|c| block.members.iter().map(|&i| c.get(i)).collect()).collect();
        if projections.len() < n_min {
            continue;
        }
        out.push(FrozenBlock { block: b, pins: block.members.iter().map(|&i| (i, incumbent.get(i))).collect() });
    }
    out
}

pub fn apply_freeze(space: &mut FlagSpace, frozen: &[FrozenBlock]) {
    for f in frozen {
        for &(i, v) in &f.pins {
            space.exclude(i, v, ExclusionReason::Frozen);
        }
    }
}
