use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluator::EvaluationRecord;
use crate::flagspace::{Configuration, FlagSpace};

const RIDGE: f64 = 1e-6;

/// Linear model of mean per-task cost over the latent encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub intercept: f64,
    /// One coefficient per latent coordinate; empty when intercept-only.
    pub coef: Vec<f64>,
    /// Spread of record means around the fit.
    pub residual_sd: f64,
    /// Pooled within-record spread of single-task costs.
    pub task_sd: f64,
}

impl CostModel {
    pub fn is_intercept_only(&self) -> bool {
        self.coef.is_empty()
    }

    /// Expected per-task cost, floored at zero.
    pub fn predict(&self, space: &FlagSpace, config: &Configuration) -> f64 {
        if self.coef.is_empty() {
            return self.intercept.max(0.0);
        }
        let z = space.encode(config).expect("configuration from the modelled space");
        (self.intercept + z.iter().zip(&self.coef).map(|(a, b)| a * b).sum::<f64>()).max(0.0)
    }

    /// A high-side bound on the cost of `m` tasks, used to keep batches
    /// inside the search budget.
    pub fn upper_bound(&self, space: &FlagSpace, config: &Configuration, m: usize) -> f64 {
        let m = m as f64;
        m * self.predict(space, config) + 3.0 * m.sqrt() * self.task_sd
    }
}

/// Ridge fit of mean per-task cost, each record weighted by its task count.
/// Falls back to an intercept when fewer than two distinct configurations
/// were seen or every record cost the same.
pub fn fit_cost_model(records: &[EvaluationRecord], space: &FlagSpace) -> Result<CostModel> {
    if records.is_empty() {
        return Err(Error::EmptyHistory);
    }
    let weights: Vec<f64> = records.iter().map(|r| r.fidelity() as f64).collect();
    let total: f64 = weights.iter().sum();
    let y: Vec<f64> = records.iter().map(|r| r.mean_cost()).collect();
    let y_bar = weights.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / total;

    let (mut within, mut dof) = (0.0, 0.0);
    for r in records {
        let mean = r.mean_cost();
        within += r.costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>();
        dof += (r.fidelity() - 1) as f64;
    }

    let mut distinct: Vec<&Configuration> = records.iter().map(|r| &r.config).collect();
    distinct.sort();
    distinct.dedup();
    let constant = y.iter().all(|&v| v == y[0]);

    let (intercept, coef) = if distinct.len() < 2 || constant {
        (y_bar, Vec::new())
    } else {
        let n = records.len();
        let d = space.latent_dim();
        let mut x = DMatrix::zeros(n, d);
        for (i, r) in records.iter().enumerate() {
            x.row_mut(i).copy_from_slice(&space.encode(&r.config)?);
        }
        let x_bar: Vec<f64> = (0..d).map(|j| (0..n).map(|i| weights[i] * x[(i, j)]).sum::<f64>() / total).collect();
        let mut xw = DMatrix::zeros(n, d);
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] -= x_bar[j];
                xw[(i, j)] = x[(i, j)] * weights[i] / total;
            }
        }
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_bar));
        let mut a = x.transpose() * &xw;
        for j in 0..d {
            a[(j, j)] += RIDGE;
        }
        let beta = a
            .cholesky()
            .ok_or_else(|| Error::InvalidConfig("cost regression is not positive definite".into()))?
            .solve(&(xw.transpose() * yc));
        let coef: Vec<f64> = beta.iter().copied().collect();
        let intercept = y_bar - coef.iter().zip(&x_bar).map(|(b, m)| b * m).sum::<f64>();
        (intercept, coef)
    };

    let mut model = CostModel { intercept, coef, residual_sd: 0.0, task_sd: 0.0 };
    let sse: f64 =
        records.iter().zip(&weights).map(|(r, w)| w * (r.mean_cost() - model.predict(space, &r.config)).powi(2)).sum();
    model.residual_sd = (sse / total).sqrt();
    model.task_sd =
        if dof > 0.0 { (within / dof).sqrt() } else { model.residual_sd * (total / records.len() as f64).sqrt() };
    Ok(model)
}
