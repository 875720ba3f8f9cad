//! Evaluation records: task suites and their fidelity subsets, the adapter
//! interface, record assembly, and the full-suite baseline anchor.

mod process;
mod sim;

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flagspace::{Configuration, FlagSpace, FlagValue};
use crate::telemetry::TelemetrySnapshot;

pub use process::{serve_simulator, ProcessAdapter, WireMessage};
pub(crate) use sim::splitmix;
pub use sim::{logistic, sim_truth, Coupling, Effect, SimSpec, SimTask, Simulator, SuiteGenerator, Truth};

/// Recorded costs are snapped to multiples of 2^-24 so that ledger sums are
/// exact regardless of summation order.
pub const COST_RESOLUTION: f64 = 1.0 / (1u64 << 24) as f64;

pub fn quantize_cost(c: f64) -> f64 {
    (c.max(0.0) / COST_RESOLUTION).round() * COST_RESOLUTION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub tasks: Vec<String>,
    #[serde(default)]
    pub categories: Option<BTreeMap<String, String>>,
    #[serde(default)]
    pub smoke_task: Option<String>,
}

impl TaskSuite {
    pub fn new(tasks: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for t in &tasks {
            if !seen.insert(t) {
                return Err(Error::InvalidConfig(format!("duplicate task id `{t}`")));
            }
        }
        if tasks.is_empty() {
            return Err(Error::InvalidConfig("task suite is empty".into()));
        }
        Ok(TaskSuite { tasks, categories: None, smoke_task: None })
    }

    pub fn with_categories(mut self, categories: BTreeMap<String, String>) -> Self {
        self.categories = Some(categories);
        self
    }

    pub fn full_size(&self) -> usize {
        self.tasks.len()
    }

    /// Parses a TOML suite document: `tasks = [...]`, optional
    /// `smoke_task`, optional `[categories]` table of task → label.
    pub fn parse(document: &str) -> Result<Self> {
        let suite: TaskSuite = toml::from_str(document).map_err(|e| Error::Document(e.to_string()))?;
        let mut checked = TaskSuite::new(suite.tasks)?;
        checked.categories = suite.categories;
        checked.smoke_task = suite.smoke_task;
        Ok(checked)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FidelityMode {
    PrefixShuffle,
    Stratified,
}

/// The `m`-task subset for `(suite, m, seed, mode)`, returned in the suite's
/// canonical order. Prefix-shuffle subsets are nested in `m` for a fixed
/// seed; stratified subsets allocate categories by largest remainder.
pub fn fidelity_subset(suite: &TaskSuite, m: usize, seed: u64, mode: FidelityMode) -> Result<Vec<String>> {
    let n = suite.full_size();
    if m == 0 || m > n {
        return Err(Error::InvalidFidelity { m, full: n });
    }
    let chosen: Vec<usize> = match mode {
        FidelityMode::PrefixShuffle => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            order.truncate(m);
            order
        }
        FidelityMode::Stratified => {
            let categories = suite.categories.as_ref().ok_or(Error::MissingCategories)?;
            let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
            for (i, t) in suite.tasks.iter().enumerate() {
                let label = categories.get(t).cloned().unwrap_or_default();
                match groups.iter_mut().find(|(l, _)| *l == label) {
                    Some((_, members)) => members.push(i),
                    None => groups.push((label, vec![i])),
                }
            }
            let quotas = largest_remainder(&groups.iter().map(|(_, g)| g.len()).collect::<Vec<_>>(), m);
            let mut out = Vec::with_capacity(m);
            for (g, ((_, members), quota)) in groups.iter().zip(quotas).enumerate() {
                let mut order = members.clone();
                order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ (g as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)));
                out.extend(order.into_iter().take(quota));
            }
            out
        }
    };
    let mut chosen = chosen;
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| suite.tasks[i].clone()).collect())
}

fn largest_remainder(sizes: &[usize], m: usize) -> Vec<usize> {
    let total: usize = sizes.iter().sum();
    let exact: Vec<f64> = sizes.iter().map(|&s| s as f64 * m as f64 / total as f64).collect();
    let mut quotas: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut left = m - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..sizes.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(sizes[b].cmp(&sizes[a])).then(a.cmp(&b))
    });
    for &g in &order {
        if left == 0 {
            break;
        }
        if quotas[g] < sizes[g] {
            quotas[g] += 1;
            left -= 1;
        }
    }
    quotas
}

/// Draws each fidelity subset once and hands back the same list thereafter.
#[derive(Debug, Clone)]
pub struct FidelityPlan {
    suite: TaskSuite,
    seed: u64,
    mode: FidelityMode,
    drawn: HashMap<usize, Vec<String>>,
}

impl FidelityPlan {
    pub fn new(suite: TaskSuite, seed: u64, mode: FidelityMode) -> Result<Self> {
        if mode == FidelityMode::Stratified && suite.categories.is_none() {
            return Err(Error::MissingCategories);
        }
        Ok(FidelityPlan { suite, seed, mode, drawn: HashMap::new() })
    }

    pub fn suite(&self) -> &TaskSuite {
        &self.suite
    }

    pub fn tasks(&mut self, m: usize) -> Result<&[String]> {
        if !self.drawn.contains_key(&m) {
            let subset = fidelity_subset(&self.suite, m, self.seed, self.mode)?;
            self.drawn.insert(m, subset);
        }
        Ok(&self.drawn[&m])
    }
}

/// One per-task evaluation request.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRequest {
    pub config: Configuration,
    pub assignment: BTreeMap<String, FlagValue>,
    pub task_id: String,
    pub session_index: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskResult {
    pub task_id: String,
    pub passed: bool,
    pub cost: f64,
    pub counters: BTreeMap<String, f64>,
    pub turns: u64,
}

/// Something that can run tasks under a configuration: the built-in
/// simulator or an external harness behind the line protocol.
pub trait Adapter: Send + Sync {
    /// Runs every request, at most `parallelism` at a time, returning
    /// results aligned with `requests`.
    fn run_tasks(&self, requests: &[TaskRequest], parallelism: usize) -> Result<Vec<TaskResult>>;
}

/// Cold-start correction attached to a record by [`crate::warmstart`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correction {
    pub warm_fraction: f64,
    pub target: f64,
    pub variance: f64,
    pub clipped: bool,
    pub uninformative: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub config: Configuration,
    pub tasks: Vec<String>,
    pub outcomes: Vec<bool>,
    pub costs: Vec<f64>,
    pub raw_pass_rate: f64,
    pub total_cost: f64,
    pub session_index: u64,
    pub seed: u64,
    pub telemetry: TelemetrySnapshot,
    pub correction: Option<Correction>,
}

impl EvaluationRecord {
    pub fn fidelity(&self) -> usize {
        self.tasks.len()
    }

    pub fn passes(&self) -> usize {
        self.outcomes.iter().filter(|&&o| o).count()
    }

    pub fn mean_cost(&self) -> f64 {
        self.total_cost / self.tasks.len() as f64
    }

    /// Assembles a record from per-task results in task order.
    pub fn assemble(config: Configuration, results: Vec<TaskResult>, session_index: u64, seed: u64) -> Self {
        let mut telemetry = TelemetrySnapshot::default();
        let mut tasks = Vec::with_capacity(results.len());
        let mut outcomes = Vec::with_capacity(results.len());
        let mut costs = Vec::with_capacity(results.len());
        for r in results {
            telemetry.absorb(&r.counters, r.turns);
            outcomes.push(r.passed);
            costs.push(quantize_cost(r.cost));
            tasks.push(r.task_id);
        }
        let total_cost = costs.iter().sum();
        let passes = outcomes.iter().filter(|&&o| o).count();
        EvaluationRecord {
            config,
            raw_pass_rate: passes as f64 / tasks.len() as f64,
            tasks,
            outcomes,
            costs,
            total_cost,
            session_index,
            seed,
            telemetry,
            correction: None,
        }
    }
}

/// Evaluates `config` on `tasks`, one pass bit, cost and counter set per
/// task. The record is independent of the order tasks complete in.
pub fn evaluate(
    adapter: &dyn Adapter,
    space: &FlagSpace,
    config: &Configuration,
    tasks: &[String],
    session_index: u64,
    seed: u64,
    parallelism: usize,
) -> Result<EvaluationRecord> {
    if tasks.is_empty() {
        return Err(Error::InvalidConfig("evaluation needs at least one task".into()));
    }
    space.validate(config)?;
    let assignment = space.assignment(config);
    let requests: Vec<TaskRequest> = tasks
        .iter()
        .map(|t| TaskRequest {
            config: config.clone(),
            assignment: assignment.clone(),
            task_id: t.clone(),
            session_index,
            seed,
        })
        .collect();
    let results = adapter.run_tasks(&requests, parallelism.max(1))?;
    if results.len() != requests.len() || results.iter().zip(tasks).any(|(r, t)| &r.task_id != t) {
        return Err(Error::Malformed {
            payload: format!("{} results for {} tasks", results.len(), tasks.len()),
            reason: "adapter results do not line up with the requested tasks".into(),
        });
    }
    Ok(EvaluationRecord::assemble(config.clone(), results, session_index, seed))
}

/// The full-suite anchor: pass rate and binomial variance of the
/// all-warm-flags-off configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub rate: f64,
    pub variance: f64,
    pub record: EvaluationRecord,
}

pub fn measure_baseline(
    adapter: &dyn Adapter,
    space: &FlagSpace,
    suite: &TaskSuite,
    seed: u64,
    parallelism: usize,
) -> Result<Baseline> {
    let config = space.baseline_config();
    let record = evaluate(adapter, space, &config, &suite.tasks, 0, seed, parallelism)?;
    let n = record.fidelity() as f64;
    let rate = record.raw_pass_rate;
    Ok(Baseline { rate, variance: rate * (1.0 - rate) / n, record })
}

/// Runs `f` over `requests` on up to `parallelism` threads, preserving order.
pub(crate) fn fan_out<F>(requests: &[TaskRequest], parallelism: usize, f: F) -> Result<Vec<TaskResult>>
where
    F: Fn(&TaskRequest) -> Result<TaskResult> + Sync,
{
    if parallelism <= 1 || requests.len() <= 1 {
        return requests.iter().map(&f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| requests.par_iter().map(&f).collect())
}
