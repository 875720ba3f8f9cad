//! Synthetic harness: a logistic pass model with per-flag effects, pairwise
//! couplings and saturating warm-up, plus telemetry counters that can be
//! gated silent. Everything the optimizer sees from a live harness, with an
//! exact oracle behind it.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{fan_out, Adapter, TaskRequest, TaskResult, TaskSuite};
use crate::error::{Error, Result};
use crate::flagspace::{Configuration, FlagKind, FlagSpace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTask {
    pub id: String,
    pub base_logit: f64,
    pub base_cost: f64,
    #[serde(default = "default_turns")]
    pub turns: u64,
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub smoke: bool,
}

fn default_turns() -> u64 {
    12
}

/// A flag's effect on the pass logit: a coefficient on its single latent
/// coordinate, or one coefficient per categorical level coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Effect {
    Scalar(f64),
    Levels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub a: String,
    pub b: String,
    pub weight: f64,
}

/// Ground truth for the simulator. Flags are referred to by name and bound
/// to a space by [`Simulator::new`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "task")]
    pub tasks: Vec<SimTask>,
    #[serde(default)]
    pub suite: Option<SuiteGenerator>,
    #[serde(default)]
    pub effects: BTreeMap<String, Effect>,
    #[serde(default, rename = "coupling")]
    pub couplings: Vec<Coupling>,
    #[serde(default)]
    pub warm_kappa: BTreeMap<String, f64>,
    #[serde(default = "default_kappa")]
    pub kappa_default: f64,
    /// Per-flag cost overhead per task; flags not listed use the space's
    /// `cost_weight`.
    #[serde(default)]
    pub overhead: BTreeMap<String, f64>,
    /// Log-scale standard deviation of multiplicative cost noise.
    #[serde(default)]
    pub cost_noise: f64,
    #[serde(default)]
    pub silent: Vec<String>,
    #[serde(default = "default_write_rate")]
    pub write_rate: f64,
    #[serde(default = "default_consumer_rate")]
    pub consumer_rate: f64,
}

fn default_kappa() -> f64 {
    2.0
}
fn default_write_rate() -> f64 {
    1.0
}
fn default_consumer_rate() -> f64 {
    0.5
}

/// Shorthand for a generated suite: `count` tasks named `t00..`, logits
/// spread evenly over `base_logit ± logit_spread`, costs over
/// `base_cost ± cost_spread`, categories assigned round-robin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteGenerator {
    pub count: usize,
    #[serde(default)]
    pub base_logit: f64,
    #[serde(default)]
    pub logit_spread: f64,
    #[serde(default = "one")]
    pub base_cost: f64,
    #[serde(default)]
    pub cost_spread: f64,
    #[serde(default = "default_turns")]
    pub turns: u64,
    #[serde(default)]
    pub categories: Vec<String>,
}

fn one() -> f64 {
    1.0
}

impl SuiteGenerator {
    pub fn tasks(&self) -> Vec<SimTask> {
        let width = self.count.saturating_sub(1).to_string().len().max(2);
        (0..self.count)
            .map(|i| {
                let u = if self.count > 1 { 2.0 * i as f64 / (self.count - 1) as f64 - 1.0 } else { 0.0 };
                // Costs run against the index so easy and cheap tasks do not coincide.
                let v = if self.count > 1 {
                    1.0 - 2.0 * ((i * 7) % self.count) as f64 / (self.count - 1) as f64
                } else {
                    0.0
                };
                SimTask {
                    id: format!("t{i:0width$}"),
                    base_logit: self.base_logit + self.logit_spread * u,
                    base_cost: (self.base_cost + self.cost_spread * v).max(0.0),
                    turns: self.turns,
                    category: (!self.categories.is_empty()).then(|| self.categories[i % self.categories.len()].clone()),
                    smoke: false,
                }
            })
            .collect()
    }
}

impl Default for SimSpec {
    fn default() -> Self {
        SimSpec {
            seed: 0,
            tasks: Vec::new(),
            suite: None,
            effects: BTreeMap::new(),
            couplings: Vec::new(),
            warm_kappa: BTreeMap::new(),
            kappa_default: default_kappa(),
            overhead: BTreeMap::new(),
            cost_noise: 0.0,
            silent: Vec::new(),
            write_rate: default_write_rate(),
            consumer_rate: default_consumer_rate(),
        }
    }
}

impl SimSpec {
    pub fn parse(document: &str) -> Result<Self> {
        let mut spec: SimSpec = toml::from_str(document).map_err(|e| Error::Simulator(e.to_string()))?;
        if let Some(generator) = spec.suite.take() {
            spec.tasks.extend(generator.tasks());
        }
        Ok(spec)
    }

    /// `count` identical tasks with the given base logit and unit cost.
    pub fn uniform(count: usize, base_logit: f64) -> Self {
        SimSpec {
            tasks: SuiteGenerator {
                count,
                base_logit,
                logit_spread: 0.0,
                base_cost: 1.0,
                cost_spread: 0.0,
                turns: default_turns(),
                categories: Vec::new(),
            }
            .tasks(),
            ..SimSpec::default()
        }
    }
}

#[derive(Debug, Clone)]
struct FlagModel {
    /// Logit coefficient per latent coordinate.
    coef: Vec<f64>,
    /// `Some(kappa)` for warm-dependent flags.
    kappa: Option<f64>,
    overhead: f64,
    silent: bool,
}

/// A [`SimSpec`] bound to a space. Implements [`Adapter`].
#[derive(Debug, Clone)]
pub struct Simulator {
    spec: SimSpec,
    space: FlagSpace,
    flags: Vec<FlagModel>,
    couplings: Vec<(usize, usize, f64)>,
    task_index: BTreeMap<String, usize>,
}

/// Exact expectations for one configuration at one session index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub mean: f64,
    /// Expected per-task cost, averaged over the suite.
    pub cost: f64,
}

impl Simulator {
    pub fn new(spec: SimSpec, space: &FlagSpace) -> Result<Self> {
        if spec.tasks.is_empty() {
            return Err(Error::Simulator("no tasks defined".into()));
        }
        let lookup =
            |name: &str| space.index_of(name).ok_or_else(|| Error::Simulator(format!("unknown flag `{name}`")));
        for name in
            spec.effects.keys().chain(spec.warm_kappa.keys()).chain(spec.overhead.keys()).chain(spec.silent.iter())
        {
            lookup(name)?;
        }
        if spec.kappa_default <= 0.0 || spec.warm_kappa.values().any(|&k| k <= 0.0 || !k.is_finite()) {
            return Err(Error::Simulator("warm_kappa must be positive".into()));
        }
        if spec.cost_noise < 0.0
            || spec.overhead.values().any(|&c| c < 0.0)
            || spec.tasks.iter().any(|t| t.base_cost < 0.0 || !t.base_cost.is_finite())
        {
            return Err(Error::Simulator("cost components must be nonnegative".into()));
        }

        let mut flags = Vec::with_capacity(space.len());
        for f in space.flags() {
            let dim = f.kind.latent_dim();
            let coef = match spec.effects.get(&f.name) {
                None => vec![0.0; dim],
                Some(Effect::Scalar(c)) if dim == 1 => vec![*c],
                Some(Effect::Levels(cs)) if cs.len() == dim => cs.clone(),
                Some(_) => {
                    return Err(Error::Simulator(format!("effect for `{}` must have {dim} coefficient(s)", f.name)))
                }
            };
            flags.push(FlagModel {
                coef,
                kappa: f.warm_dependent.then(|| spec.warm_kappa.get(&f.name).copied().unwrap_or(spec.kappa_default)),
                overhead: spec.overhead.get(&f.name).copied().unwrap_or(f.cost_weight),
                silent: spec.silent.contains(&f.name),
            });
        }
        let mut couplings = Vec::new();
        for c in &spec.couplings {
            let (a, b) = (lookup(&c.a)?, lookup(&c.b)?);
            if a == b {
                return Err(Error::Simulator(format!("coupling of `{}` with itself", c.a)));
            }
            couplings.push((a, b, c.weight));
        }
        let mut task_index = BTreeMap::new();
        for (i, t) in spec.tasks.iter().enumerate() {
            if task_index.insert(t.id.clone(), i).is_some() {
                return Err(Error::Simulator(format!("duplicate task `{}`", t.id)));
            }
        }
        Ok(Simulator { spec, space: space.clone(), flags, couplings, task_index })
    }

    pub fn spec(&self) -> &SimSpec {
        &self.spec
    }

    pub fn space(&self) -> &FlagSpace {
        &self.space
    }

    /// The task suite, with categories when every task has one. The smoke
    /// task is the one marked `smoke`, else the cheapest.
    pub fn suite(&self) -> TaskSuite {
        let tasks: Vec<String> = self.spec.tasks.iter().map(|t| t.id.clone()).collect();
        let mut suite = TaskSuite::new(tasks).expect("task ids validated at construction");
        if self.spec.tasks.iter().all(|t| t.category.is_some()) {
            suite.categories =
                Some(self.spec.tasks.iter().map(|t| (t.id.clone(), t.category.clone().unwrap_or_default())).collect());
        }
        let smoke = self
            .spec
            .tasks
            .iter()
            .find(|t| t.smoke)
            .or_else(|| self.spec.tasks.iter().min_by(|a, b| a.base_cost.total_cmp(&b.base_cost)));
        suite.smoke_task = smoke.map(|t| t.id.clone());
        suite
    }

    /// Saturating warm-up `1 − exp(−n/κ)` of flag `i`; 1 for flags that do
    /// not depend on cross-session state.
    pub fn warm_fraction(&self, flag: usize, session_index: u64) -> f64 {
        match self.flags[flag].kappa {
            Some(kappa) => 1.0 - (-(session_index as f64) / kappa).exp(),
            None => 1.0,
        }
    }

    /// Effective latent coordinates of flag `i`: warm flags interpolate from
    /// their cold (off) encoding toward the configured one.
    fn effective_latent(&self, config: &Configuration, i: usize, session_index: u64, out: &mut Vec<f64>) {
        let def = self.space.flag(i);
        let dim = def.kind.latent_dim();
        out.clear();
        out.resize(dim, 0.0);
        def.write_latent(config.get(i), out);
        if self.flags[i].kappa.is_some() {
            let w = self.warm_fraction(i, session_index);
            let mut cold = vec![0.0; dim];
            def.write_latent(cold_index(def.default, &def.kind), &mut cold);
            for (z, c) in out.iter_mut().zip(cold) {
                *z = c + w * (*z - c);
            }
        }
    }

    /// Activation in [0, 1] used by couplings and overheads.
    fn activation(&self, config: &Configuration, i: usize, latent: &[f64]) -> f64 {
        let def = self.space.flag(i);
        match def.kind {
            FlagKind::Categorical { .. } => {
                // Levels other than the default are "engaged".
                if config.get(i) == def.default {
                    0.0
                } else {
                    1.0
                }
            }
            _ => (1.0 + latent[0]) / 2.0,
        }
    }

    /// Configuration-dependent part of the logit, shared by every task.
    pub fn config_logit(&self, config: &Configuration, session_index: u64) -> f64 {
        let mut logit = 0.0;
        let mut acts = vec![0.0; self.flags.len()];
        let mut z = Vec::new();
        for (i, f) in self.flags.iter().enumerate() {
            self.effective_latent(config, i, session_index, &mut z);
            logit += f.coef.iter().zip(&z).map(|(c, v)| c * v).sum::<f64>();
            acts[i] = self.activation(config, i, &z);
        }
        for &(a, b, w) in &self.couplings {
            logit += w * acts[a] * acts[b];
        }
        logit
    }

    fn overhead(&self, config: &Configuration) -> f64 {
        let mut z = Vec::new();
        let mut total = 0.0;
        for (i, f) in self.flags.iter().enumerate() {
            let def = self.space.flag(i);
            z.clear();
            z.resize(def.kind.latent_dim(), 0.0);
            def.write_latent(config.get(i), &mut z);
            total += f.overhead * self.activation(config, i, &z);
        }
        total
    }

    /// Exact mean pass rate and expected per-task cost.
    pub fn truth(&self, config: &Configuration, session_index: u64) -> Truth {
        let shift = self.config_logit(config, session_index);
        let n = self.spec.tasks.len() as f64;
        let mean = self.spec.tasks.iter().map(|t| logistic(t.base_logit + shift)).sum::<f64>() / n;
        let overhead = self.overhead(config);
        let cost = self.spec.tasks.iter().map(|t| t.base_cost + overhead).sum::<f64>() / n;
        Truth { mean, cost }
    }

    /// Shifts every task's base logit by one constant so the baseline
    /// configuration's true pass rate equals `target`.
    pub fn calibrate_baseline(&mut self, target: f64) -> Result<()> {
        if !(0.0 < target && target < 1.0) {
            return Err(Error::Simulator(format!("baseline target {target} outside (0, 1)")));
        }
        let base = self.space.baseline_config();
        let (mut lo, mut hi) = (-40.0, 40.0);
        let rate_at = |sim: &Simulator, s: f64| {
            let shift = sim.config_logit(&base, 0) + s;
            sim.spec.tasks.iter().map(|t| logistic(t.base_logit + shift)).sum::<f64>() / sim.spec.tasks.len() as f64
        };
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate_at(self, mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let s = 0.5 * (lo + hi);
        for t in &mut self.spec.tasks {
            t.base_logit += s;
        }
        Ok(())
    }

    /// One task under one request. The random stream depends only on the
    /// request, so results do not depend on scheduling.
    pub fn run_task(&self, req: &TaskRequest) -> Result<TaskResult> {
        let &ti = self
            .task_index
            .get(&req.task_id)
            .ok_or_else(|| Error::Simulator(format!("unknown task `{}`", req.task_id)))?;
        let task = &self.spec.tasks[ti];
        let config = &req.config;
        let mut rng = ChaCha8Rng::seed_from_u64(request_seed(self.spec.seed, req, ti));

        let p = logistic(task.base_logit + self.config_logit(config, req.session_index));
        let passed = rng.random::<f64>() < p;
        let mean_cost = task.base_cost + self.overhead(config);
        let cost = if self.spec.cost_noise > 0.0 {
            let s = self.spec.cost_noise;
            let g: f64 = rng.sample(StandardNormal);
            mean_cost * (s * g - 0.5 * s * s).exp()
        } else {
            mean_cost
        };

        let mut counters = BTreeMap::new();
        for (i, f) in self.flags.iter().enumerate() {
            let def = self.space.flag(i);
            if !def.is_on(config.get(i)) {
                continue;
            }
            for name in &def.counters.write {
                *counters.entry(name.clone()).or_insert(0.0) += (self.spec.write_rate * task.turns as f64).round();
            }
            let fires = !f.silent && task.turns >= u64::from(def.counters.firing_turns);
            let w = self.warm_fraction(i, req.session_index);
            for name in &def.counters.consumer {
                let v = if fires { (self.spec.consumer_rate * task.turns as f64 * w).round() } else { 0.0 };
                *counters.entry(name.clone()).or_insert(0.0) += v;
            }
        }
        Ok(TaskResult { task_id: req.task_id.clone(), passed, cost, counters, turns: task.turns })
    }
}

fn cold_index(default: u32, kind: &FlagKind) -> u32 {
    match kind {
        FlagKind::Boolean => 0,
        _ => default,
    }
}

impl Adapter for Simulator {
    fn run_tasks(&self, requests: &[TaskRequest], parallelism: usize) -> Result<Vec<TaskResult>> {
        fan_out(requests, parallelism, |r| self.run_task(r))
    }
}

/// Exact `(mean pass rate, expected per-task cost)` of `config`.
pub fn sim_truth(sim: &Simulator, config: &Configuration, session_index: u64) -> Truth {
    sim.truth(config, session_index)
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn request_seed(spec_seed: u64, req: &TaskRequest, task: usize) -> u64 {
    let mut h = splitmix(spec_seed);
    for v in [req.seed, task as u64, req.session_index] {
        h = splitmix(h ^ v);
    }
    for &v in req.config.indices() {
        h = splitmix(h ^ u64::from(v));
    }
    h
}
