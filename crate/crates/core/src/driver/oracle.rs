use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::acquisition::{FrontPoint, ParetoFront};
use crate::error::{Error, Result};
use crate::evaluator::{sim_truth, Simulator};
use crate::flagspace::{Configuration, FlagValue};

/// Largest space the oracle will enumerate.
pub const ORACLE_LIMIT: u128 = 1 << 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OraclePoint {
    pub config: BTreeMap<String, FlagValue>,
    pub indices: Configuration,
    pub mean: f64,
    pub cost: f64,
}

/// The true safe front of a simulator, by enumeration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFront {
    pub baseline_mean: f64,
    /// Safety threshold `baseline_mean − delta`.
    pub threshold: f64,
    pub reference: (f64, f64),
    pub points: Vec<OraclePoint>,
    pub hypervolume: f64,
    pub enumerated: usize,
}

/// Fully warm truth of every configuration; safe means at least
/// `baseline − delta` and costing at most `budget_deploy` per task.
pub fn oracle_front(sim: &Simulator, delta: f64, budget_deploy: f64) -> Result<OracleFront> {
    let space = sim.space();
    if space.active_cardinality() > ORACLE_LIMIT {
        return Err(Error::InvalidConfig(format!(
            "{} configurations exceed the oracle limit of {ORACLE_LIMIT}",
            space.active_cardinality()
        )));
    }
    let baseline_mean = sim_truth(sim, &space.baseline_config(), u64::MAX).mean;
    let threshold = baseline_mean - delta;
    let all: Vec<(Configuration, f64, f64)> = space
        .enumerate()
        .into_iter()
        .map(|c| {
            let t = sim_truth(sim, &c, u64::MAX);
            (c, t.mean, t.cost)
        })
        .collect();
    let max_cost = all.iter().map(|a| a.2).fold(0.0, f64::max);
    let reference = (0.0, 2.0 * max_cost);
    let safe = all.iter().filter(|(_, m, c)| *m >= threshold && *c <= budget_deploy).map(|(c, m, k)| FrontPoint {
        mean: *m,
        cost: *k,
        config: c.clone(),
    });
    let front = ParetoFront::new(space.len(), reference, safe);
    Ok(OracleFront {
        baseline_mean,
        threshold,
        reference,
        hypervolume: front.hypervolume(),
        points: front
            .points()
            .iter()
            .map(|p| OraclePoint {
                config: space.assignment(&p.config),
                indices: p.config.clone(),
                mean: p.mean,
                cost: p.cost,
            })
            .collect(),
        enumerated: all.len(),
    })
}

/// Hypervolume of `configs` scored by their fully warm truth.
pub fn true_hypervolume(sim: &Simulator, configs: &[Configuration], reference: (f64, f64)) -> f64 {
    let pts = configs.iter().map(|c| {
        let t = sim_truth(sim, c, u64::MAX);
        FrontPoint { mean: t.mean, cost: t.cost, config: c.clone() }
    });
    ParetoFront::new(0, reference, pts).hypervolume()
}
