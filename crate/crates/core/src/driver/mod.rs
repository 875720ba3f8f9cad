//! The end-to-end loop: baseline anchor, space-filling init, trust-region
//! batches under the search budget, and a preflight-gated commit from the
//! safe Pareto front.

mod history;
mod oracle;
mod report;
mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::acquisition::{select_batch, AcquisitionParams, FrontPoint, ParetoFront, Safety, Shortfall};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, splitmix, Adapter, EvaluationRecord, FidelityMode, FidelityPlan, TaskSuite};
use crate::flagspace::{Configuration, ExclusionReason, FlagKind, FlagSpace, FlagValue};
use crate::surrogate::{fit, fit_cost_model, Anova, CostModel, Observation, Penalties, Surrogate};
use crate::telemetry::{detect_asymmetry, detect_silent, preflight_smoke, FlagVerdict, SilentFlag};
use crate::trustregion::{
    apply_freeze, freeze_blocks, init_regions, update_region, Outcome, RegionParams, TrustRegion,
};
use crate::warmstart::{correct_record, WarmupModel};

pub use history::{
    load_meta_history, ExclusionEvent, Header, History, HistoryLine, HistoryRecord, HistoryWriter, ImportedRecord,
    RegionChange, RegionEvent,
};
pub use oracle::{oracle_front, true_hypervolume, OracleFront, OraclePoint, ORACLE_LIMIT};
pub use report::{parse_report, report, Format, Ledger, LedgerRow};
pub use stats::wilson_interval;

/// Consecutive iterations without a single evaluation before the loop gives up.
const STALL_LIMIT: usize = 12;
const TRANSPORT_ATTEMPTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Init,
    Search,
    Preflight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Cap on cumulative evaluation cost, in baseline full-suite units.
    pub budget_search: f64,
    /// Ceiling on expected per-task cost of a deployable configuration.
    pub budget_deploy: f64,
    pub delta: f64,
    pub eta: f64,
    pub fidelities: Vec<usize>,
    pub batch: usize,
    pub regions: usize,
    pub sobol: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub fidelity_mode: FidelityMode,
    pub lambda_meta: f64,
    pub warm_kappa: f64,
    pub penalties: Penalties,
    pub r0: usize,
    /// Defaults to the number of flags.
    pub r_max: Option<usize>,
    pub tau_succ: u32,
    pub tau_fail: u32,
    pub n_min: usize,
    pub collapse_ratio: f64,
    pub epsilon: f64,
    pub n_silent: usize,
    pub samples: usize,
    pub pool_cap: usize,
    pub d_div: f64,
    pub wilson_level: f64,
    pub preflight_attempts: usize,
    pub max_iterations: usize,
    /// Firing turn counts overriding the space's bindings during preflight.
    pub smoke_thresholds: BTreeMap<String, u32>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            budget_search: 40.0,
            budget_deploy: 1e9,
            delta: 0.05,
            eta: 0.1,
            fidelities: vec![8, 22, 44, 89],
            batch: 2,
            regions: 3,
            sobol: 32,
            seed: 0,
            parallelism: 4,
            fidelity_mode: FidelityMode::PrefixShuffle,
            lambda_meta: 4.0,
            warm_kappa: 2.0,
            penalties: Penalties::default(),
            r0: 2,
            r_max: None,
            tau_succ: 3,
            tau_fail: 3,
            n_min: 8,
            collapse_ratio: 1e-3,
            epsilon: 0.5,
            n_silent: 3,
            samples: 256,
            pool_cap: 1024,
            d_div: 2.0,
            wilson_level: 0.9,
            preflight_attempts: 5,
            max_iterations: 500,
            smoke_thresholds: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self, full_size: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.budget_search > 0.0) || !(self.budget_deploy > 0.0) {
            return bad("both budgets must be positive");
        }
        if !(self.delta >= 0.0) {
            return bad("delta must be nonnegative");
        }
        if !(self.eta > 0.0 && self.eta <= 0.5) {
            return bad("eta must lie in (0, 0.5]");
        }
        if self.fidelities.is_empty()
            || self.fidelities[0] == 0
            || self.fidelities.windows(2).any(|w| w[0] >= w[1])
            || *self.fidelities.last().unwrap() != full_size
        {
            return Err(Error::InvalidConfig(format!(
                "fidelities must ascend strictly from at least 1 to the suite size {full_size}, got {:?}",
                self.fidelities
            )));
        }
        if self.batch == 0 || self.regions == 0 || self.sobol == 0 || self.parallelism == 0 || self.samples == 0 {
            return bad("batch, regions, sobol, parallel and samples must be at least 1");
        }
        if self.r0 == 0 || self.tau_succ == 0 || self.tau_fail == 0 || self.n_silent == 0 {
            return bad("r0, tau_succ, tau_fail and n_silent must be at least 1");
        }
        if !(self.lambda_meta >= 1.0) || !(self.warm_kappa > 0.0) || !(self.epsilon > 0.0) {
            return bad("lambda_meta ≥ 1, warm_kappa > 0 and epsilon > 0 are required");
        }
        if !(self.wilson_level > 0.0 && self.wilson_level < 1.0) {
            return bad("wilson level must lie in (0, 1)");
        }
        Ok(())
    }

    fn region_params(&self, flags: usize) -> RegionParams {
        RegionParams {
            r0: self.r0,
            r_max: self.r_max.unwrap_or(flags).max(1),
            tau_succ: self.tau_succ,
            tau_fail: self.tau_fail,
        }
    }

    fn acquisition(&self) -> AcquisitionParams {
        AcquisitionParams { q: self.batch, samples: self.samples, d_div: self.d_div, pool_cap: self.pool_cap }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub rate: f64,
    pub variance: f64,
    pub passes: u64,
    pub trials: u64,
    pub wilson: (f64, f64),
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub config: BTreeMap<String, FlagValue>,
    pub indices: Configuration,
    pub mean: f64,
    pub sd: f64,
    pub lower_bound: f64,
    /// Expected per-task cost.
    pub cost: f64,
    pub passes: u64,
    pub trials: u64,
    pub wilson: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub config: BTreeMap<String, FlagValue>,
    pub indices: Configuration,
    pub verdicts: Vec<FlagVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Veto {
    pub config: BTreeMap<String, FlagValue>,
    pub reason: String,
    pub verdicts: Vec<FlagVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anomaly {
    pub record: usize,
    pub flag: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentEntry {
    pub after_record: usize,
    pub evidence: SilentFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenEntry {
    pub block: String,
    pub after_record: usize,
    pub pins: BTreeMap<String, FlagValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: RunConfig,
    pub baseline: BaselineSummary,
    /// Ascending cost.
    pub front: Vec<FrontEntry>,
    pub reference: (f64, f64),
    pub hypervolume: f64,
    pub committed: Option<Commitment>,
    pub vetoes: Vec<Veto>,
    pub ledger: Ledger,
    pub anova: Anova,
    pub silent: Vec<SilentEntry>,
    pub anomalies: Vec<Anomaly>,
    pub frozen: Vec<FrozenEntry>,
    pub iterations: usize,
    pub stop_reason: String,
    pub records: usize,
}

/// Non-dominated evaluated configurations by posterior mean and expected
/// per-task cost, keeping only those within `budget_deploy` that pass the
/// chance constraint. Falls back to `fallback` alone when nothing survives.
pub fn pareto_front(
    history: &[EvaluationRecord],
    s: &Surrogate,
    cost_model: &CostModel,
    budget_deploy: f64,
    safety: &Safety,
    reference: (f64, f64),
    fallback: &Configuration,
) -> ParetoFront {
    let space = s.space();
    let distinct: BTreeSet<&Configuration> = history.iter().map(|r| &r.config).collect();
    let point = |c: &Configuration| FrontPoint {
        mean: s.predict(c).mean,
        cost: cost_model.predict(space, c),
        config: c.clone(),
    };
    let fidelity = history.iter().map(|r| r.fidelity()).max().unwrap_or(0);
    let kept: Vec<FrontPoint> = distinct
        .into_iter()
        .filter(|c| safety.accepts(s.predict(c)))
        .map(point)
        .filter(|p| p.cost <= budget_deploy)
        .collect();
    if kept.is_empty() {
        return ParetoFront::new(fidelity, reference, [point(fallback)]);
    }
    ParetoFront::new(fidelity, reference, kept)
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

struct Entry {
    phase: Phase,
    record: EvaluationRecord,
}

struct Runner<'a, W: Write> {
    rc: &'a RunConfig,
    space: FlagSpace,
    adapter: &'a dyn Adapter,
    plan: FidelityPlan,
    out: HistoryWriter<W>,
    entries: Vec<Entry>,
    meta: Vec<Observation>,
    model: WarmupModel,
    r0: f64,
    var_base: f64,
    spent: f64,
    sessions: u64,
    silent: Vec<SilentEntry>,
    anomalies: Vec<Anomaly>,
    frozen: Vec<FrozenEntry>,
}

impl<W: Write> Runner<'_, W> {
    fn is_warm(&self, c: &Configuration) -> bool {
        self.model.curves.keys().any(|&i| self.space.flag(i).is_on(c.get(i)))
    }

    fn run_tasks(&self, config: &Configuration, tasks: &[String], session: u64, seed: u64) -> Result<EvaluationRecord> {
        let mut attempt = 0;
        loop {
            match evaluate(self.adapter, &self.space, config, tasks, session, seed, self.rc.parallelism) {
                Err(e) if e.is_retryable() && attempt + 1 < TRANSPORT_ATTEMPTS => attempt += 1,
                other => return other,
            }
        }
    }

    fn next_session(&mut self, c: &Configuration) -> u64 {
        let n = self.sessions;
        if self.is_warm(c) {
            self.sessions += 1;
        }
        n
    }

    fn evaluate(
        &mut self,
        config: &Configuration,
        m: usize,
        phase: Phase,
        iteration: usize,
        region: Option<usize>,
    ) -> Result<usize> {
        let tasks = self.plan.tasks(m)?.to_vec();
        let session = self.next_session(config);
        let seed = mix(self.rc.seed, self.entries.len() as u64, 1);
        let record = self.run_tasks(config, &tasks, session, seed)?;
        self.push(record, phase, iteration, region)
    }

    fn push(
        &mut self,
        mut record: EvaluationRecord,
        phase: Phase,
        iteration: usize,
        region: Option<usize>,
    ) -> Result<usize> {
        record.correction = Some(correct_record(&record, &self.space, &self.model, self.r0, self.var_base));
        self.spent += record.total_cost;
        let index = self.entries.len();
        self.out.write(&HistoryLine::Record(HistoryRecord::from_record(
            index,
            phase,
            iteration,
            region,
            &record,
            &self.space,
            self.spent,
        )))?;
        for (flag, detail) in detect_asymmetry(&record, &self.space) {
            self.anomalies.push(Anomaly { record: index, flag, detail });
        }
        self.entries.push(Entry { phase, record });

        let records: Vec<EvaluationRecord> = self.entries.iter().map(|e| e.record.clone()).collect();
        for (i, evidence) in detect_silent(&records, &self.space, self.rc.epsilon, self.rc.n_silent) {
            let flag = self.space.flag(i).clone();
            let value = match flag.kind {
                FlagKind::Boolean => 0,
                _ => flag.default,
            };
            self.space.exclude(i, value, ExclusionReason::Silent);
            self.out.write(&HistoryLine::Exclusion(ExclusionEvent {
                after_record: index,
                flag: flag.name.clone(),
                value: flag.value(value),
                reason: ExclusionReason::Silent,
                detail: format!(
                    "on in {} records, mean consumer counter {:.3}",
                    evidence.on_observations, evidence.mean_consumer
                ),
            }))?;
            self.silent.push(SilentEntry { after_record: index, evidence });
        }
        Ok(index)
    }

    fn searched(&self) -> impl Iterator<Item = &EvaluationRecord> {
        self.entries.iter().filter(|e| e.phase != Phase::Preflight).map(|e| &e.record)
    }

    fn fit(&self) -> Result<(Surrogate, CostModel)> {
        let mut obs: Vec<Observation> =
            self.entries.iter().filter_map(|e| Observation::from_record(&e.record)).collect();
        obs.extend(self.meta.iter().cloned());
        let s = fit(&obs, &self.space, self.rc.penalties, self.r0)?;
        let records: Vec<EvaluationRecord> = self.entries.iter().map(|e| e.record.clone()).collect();
        Ok((s, fit_cost_model(&records, &self.space)?))
    }

    fn reference(&self) -> (f64, f64) {
        let max = self.searched().map(|r| r.mean_cost()).fold(0.0, f64::max);
        (0.0, 2.0 * max)
    }

    /// Best corrected target per distinct evaluated configuration.
    fn targets(&self) -> Vec<(Configuration, f64)> {
        let mut best: BTreeMap<Configuration, f64> = BTreeMap::new();
        for r in self.searched() {
            if let Some(c) = r.correction.filter(|c| !c.uninformative) {
                let e = best.entry(r.config.clone()).or_insert(f64::NEG_INFINITY);
                *e = e.max(c.target);
            }
        }
        best.into_iter().collect()
    }

    fn evaluated_at(&self) -> BTreeMap<usize, BTreeSet<Configuration>> {
        let mut out: BTreeMap<usize, BTreeSet<Configuration>> = BTreeMap::new();
        for r in self.searched() {
            out.entry(r.fidelity()).or_default().insert(r.config.clone());
        }
        out
    }

    /// Front per fidelity over configurations measured there; a fidelity
    /// with no measurements borrows the front over every fidelity.
    fn fronts(&self, s: &Surrogate, cm: &CostModel) -> BTreeMap<usize, ParetoFront> {
        let reference = self.reference();
        let point = |c: &Configuration| FrontPoint {
            mean: s.predict(c).mean,
            cost: cm.predict(&self.space, c),
            config: c.clone(),
        };
        let at = self.evaluated_at();
        let all: BTreeSet<&Configuration> = at.values().flatten().collect();
        self.rc
            .fidelities
            .iter()
            .map(|&m| {
                let front = match at.get(&m) {
                    Some(cs) if !cs.is_empty() => ParetoFront::new(m, reference, cs.iter().map(point)),
                    _ => ParetoFront::new(m, reference, all.iter().map(|c| point(c))),
                };
                (m, front)
            })
            .collect()
    }

    fn max_task_cost(&self) -> f64 {
        self.entries.iter().flat_map(|e| e.record.costs.iter().copied()).fold(0.0, f64::max)
    }

    fn region_event(&mut self, iteration: usize, r: &TrustRegion, event: RegionChange) -> Result<()> {
        self.out.write(&HistoryLine::Region(RegionEvent {
            iteration,
            id: r.id,
            center: self.space.assignment(&r.center),
            radius: r.radius,
            alive: r.alive,
            event,
        }))
    }
}

/// Runs the optimizer against `adapter`, appending every event to `history`.
pub fn run<W: Write>(
    rc: &RunConfig,
    space: &FlagSpace,
    adapter: &dyn Adapter,
    suite: &TaskSuite,
    meta: &[ImportedRecord],
    history: W,
) -> Result<RunResult> {
    let full = suite.full_size();
    rc.validate(full)?;
    let mut out = HistoryWriter::new(history);
    out.write(&HistoryLine::Header(Header {
        run: rc.clone(),
        flags: space.flags().iter().map(|f| f.name.clone()).collect(),
        suite_size: full,
    }))?;
    let mut runner = Runner {
        rc,
        space: space.clone(),
        adapter,
        plan: FidelityPlan::new(suite.clone(), rc.seed, rc.fidelity_mode)?,
        out,
        entries: Vec::new(),
        meta: meta
            .iter()
            .filter_map(|m| Observation::from_record(&m.record))
            .filter(|o| space.validate(&o.config).is_ok())
            .collect(),
        model: WarmupModel::new(space, rc.warm_kappa),
        r0: 0.0,
        var_base: 0.0,
        spent: 0.0,
        sessions: 0,
        silent: Vec::new(),
        anomalies: Vec::new(),
        frozen: Vec::new(),
    };
    let r = &mut runner;

    // Baseline anchor on the full suite.
    let baseline_config = space.baseline_config();
    let tasks = suite.tasks.clone();
    let base = r.run_tasks(&baseline_config, &tasks, 0, mix(rc.seed, 0, 1))?;
    r.r0 = base.raw_pass_rate;
    r.var_base = r.r0 * (1.0 - r.r0) / full as f64;
    let unit = base.total_cost;
    if !(unit > 0.0) {
        return Err(Error::InvalidConfig("baseline evaluation reported zero cost; budget units are undefined".into()));
    }
    let baseline = BaselineSummary {
        rate: r.r0,
        variance: r.var_base,
        passes: base.passes() as u64,
        trials: full as u64,
        wilson: wilson_interval(base.passes() as u64, full as u64, rc.wilson_level)?,
        cost: unit,
    };
    r.push(base, Phase::Baseline, 0, None)?;
    let budget = rc.budget_search * unit;

    // Space-filling init at the cheapest fidelity.
    let m_min = rc.fidelities[0];
    let design = r.space.sobol_init(rc.sobol, rc.seed)?.configs;
    let per_task = unit / full as f64;
    let estimate: f64 = design
        .iter()
        .map(|c| {
            let overhead: f64 =
                space.flags().iter().enumerate().filter(|(i, f)| f.is_on(c.get(*i))).map(|(_, f)| f.cost_weight).sum();
            m_min as f64 * (per_task + overhead)
        })
        .sum();
    if r.spent + estimate > budget {
        return Err(Error::Budget { needed: (r.spent + estimate) / unit, available: rc.budget_search });
    }
    let mut stop_reason = String::from("search budget exhausted");
    for c in design {
        let c = r.space.pin(&c);
        if r.evaluated_at().get(&m_min).is_some_and(|s| s.contains(&c)) {
            continue;
        }
        let bound = m_min as f64 * 2.0 * r.max_task_cost();
        if r.spent + bound > budget {
            stop_reason = "search budget exhausted during init".into();
            break;
        }
        r.evaluate(&c, m_min, Phase::Init, 0, None)?;
    }

    let params = rc.region_params(space.len());
    let acq = rc.acquisition();
    let safety = Safety { r0: r.r0, delta: rc.delta, eta: rc.eta };
    let (mut s, mut cm) = r.fit()?;
    let mut regions: Vec<TrustRegion> = Vec::new();
    let mut iteration = 0;
    let mut stalled = 0;
    let mut exhausted = false;

    while !exhausted {
        if iteration >= rc.max_iterations {
            stop_reason = "iteration cap reached".into();
            break;
        }
        if stalled >= STALL_LIMIT {
            stop_reason = format!("no evaluable candidates for {STALL_LIMIT} iterations");
            break;
        }
        iteration += 1;

        let alive = regions.iter().filter(|t| t.alive).count();
        if alive < 2 {
            let taken: BTreeSet<Configuration> =
                regions.iter().filter(|t| t.alive).map(|t| r.space.pin(&t.center)).collect();
            let candidates: Vec<(Configuration, f64)> =
                r.targets().into_iter().filter(|(c, _)| !taken.contains(&r.space.pin(c))).collect();
            let fresh = init_regions(&candidates, &s, rc.regions - alive, &params, regions.len());
            for t in &fresh {
                r.region_event(iteration, t, RegionChange::Placed)?;
            }
            regions.extend(fresh);
        }
        if regions.iter().all(|t| !t.alive) {
            stop_reason = "no trust region could be placed".into();
            break;
        }

        let mut evaluated_any = false;
        #[allow(clippy::needless_range_loop)] // regions[k] is reassigned inside
        for k in 0..regions.len() {
            if !regions[k].alive {
                continue;
            }
            let reserve = rc.preflight_attempts as f64 * 2.0 * r.max_task_cost();
            let remaining = budget - r.spent - reserve;
            let fronts = r.fronts(&s, &cm);
            let seed = mix(rc.seed, iteration as u64, regions[k].id as u64 + 2);
            let batch = match select_batch(
                &regions[k],
                &s,
                &cm,
                &fronts,
                &rc.fidelities,
                &r.evaluated_at(),
                &acq,
                &safety,
                remaining,
                seed,
            ) {
                Ok(b) => b,
                Err(Shortfall::EmptyPool) => {
                    regions[k] = update_region(&regions[k], Outcome::NotImproved, None, &params);
                    r.region_event(iteration, &regions[k], RegionChange::EmptyPool)?;
                    continue;
                }
                Err(Shortfall::Infeasible { .. }) => {
                    exhausted = true;
                    break;
                }
            };
            let mut best: Option<(Configuration, f64)> = None;
            for c in &batch.configs {
                // Pins added earlier in this batch take effect immediately.
                if &r.space.pin(c) != c {
                    continue;
                }
                let idx = r.evaluate(c, batch.fidelity, Phase::Search, iteration, Some(regions[k].id))?;
                evaluated_any = true;
                if let Some(corr) = r.entries[idx].record.correction.filter(|c| !c.uninformative) {
                    if best.as_ref().is_none_or(|b| corr.target > b.1) {
                        best = Some((c.clone(), corr.target));
                    }
                }
            }
            let improved = best.as_ref().is_some_and(|b| b.1 > regions[k].best);
            let (outcome, change) = if improved {
                (Outcome::Improved, RegionChange::Improved)
            } else {
                (Outcome::NotImproved, RegionChange::NotImproved)
            };
            regions[k] = update_region(&regions[k], outcome, best.filter(|_| improved), &params);
            r.region_event(iteration, &regions[k], change)?;
            (s, cm) = r.fit()?;
        }
        stalled = if evaluated_any { 0 } else { stalled + 1 };

        let configs: Vec<Configuration> = r.targets().into_iter().map(|t| t.0).collect();
        if let Some(incumbent) = configs.iter().max_by(|a, b| s.predict(a).mean.total_cmp(&s.predict(b).mean)) {
            let frozen = freeze_blocks(&s, &configs, &r.space, incumbent, rc.n_min, rc.collapse_ratio);
            if !frozen.is_empty() {
                apply_freeze(&mut r.space, &frozen);
                let after = r.entries.len() - 1;
                for f in &frozen {
                    let pins: BTreeMap<String, FlagValue> =
                        f.pins.iter().map(|&(i, v)| (r.space.flag(i).name.clone(), r.space.flag(i).value(v))).collect();
                    for (name, value) in &pins {
                        r.out.write(&HistoryLine::Exclusion(ExclusionEvent {
                            after_record: after,
                            flag: name.clone(),
                            value: value.clone(),
                            reason: ExclusionReason::Frozen,
                            detail: format!("block `{}` scale collapsed", r.space.blocks()[f.block].name),
                        }))?;
                    }
                    r.frozen.push(FrozenEntry {
                        block: r.space.blocks()[f.block].name.clone(),
                        after_record: after,
                        pins,
                    });
                }
                (s, cm) = r.fit()?;
            }
        }
    }

    // Safe front, then commit the first candidate that passes preflight.
    let reference = r.reference();
    let searched: Vec<EvaluationRecord> = r
        .searched()
        .filter(|rec| {
            r.silent.iter().all(|e| {
                let i = r.space.index_of(&e.evidence.flag).expect("silent flag from this space");
                r.space.pin(&rec.config).get(i) == rec.config.get(i)
            })
        })
        .cloned()
        .collect();
    let front = pareto_front(&searched, &s, &cm, rc.budget_deploy, &safety, reference, &baseline_config);
    let mut entries = Vec::new();
    for p in front.points() {
        let (mut k, mut n) = (0u64, 0u64);
        for rec in r.searched().filter(|rec| rec.config == p.config) {
            k += rec.passes() as u64;
            n += rec.fidelity() as u64;
        }
        let pred = s.predict(&p.config);
        entries.push(FrontEntry {
            config: r.space.assignment(&p.config),
            indices: p.config.clone(),
            mean: p.mean,
            sd: pred.sd,
            lower_bound: safety.lower_bound(pred),
            cost: p.cost,
            passes: k,
            trials: n,
            wilson: if n > 0 { wilson_interval(k, n, rc.wilson_level)? } else { (0.0, 1.0) },
        });
    }

    let smoke = suite.smoke_task.clone().unwrap_or_else(|| suite.tasks[0].clone());
    let mut order: Vec<&FrontEntry> = entries.iter().collect();
    order.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.indices.cmp(&b.indices)));
    let mut committed = None;
    let mut vetoes = Vec::new();
    for (attempt, e) in order.into_iter().enumerate() {
        if attempt >= rc.preflight_attempts {
            vetoes.push(Veto {
                config: e.config.clone(),
                reason: "preflight attempts exhausted".into(),
                verdicts: Vec::new(),
            });
            continue;
        }
        let bound = 2.0 * r.max_task_cost();
        if r.spent + bound > budget {
            vetoes.push(Veto {
                config: e.config.clone(),
                reason: "search budget exhausted before preflight".into(),
                verdicts: Vec::new(),
            });
            continue;
        }
        let session = r.next_session(&e.indices);
        let seed = mix(rc.seed, r.entries.len() as u64, 1);
        let (smoke_report, record) =
            preflight_smoke(adapter, &r.space, &e.indices, &smoke, &rc.smoke_thresholds, session, seed);
        if let Some(rec) = record {
            r.push(rec, Phase::Preflight, iteration, None)?;
        }
        if smoke_report.passed {
            committed = Some(Commitment {
                config: e.config.clone(),
                indices: e.indices.clone(),
                verdicts: smoke_report.verdicts,
            });
            break;
        }
        vetoes.push(Veto {
            config: e.config.clone(),
            reason: smoke_report.veto_reason.unwrap_or_default(),
            verdicts: smoke_report.verdicts,
        });
    }

    let tally: Vec<(Phase, usize, f64)> =
        r.entries.iter().map(|e| (e.phase, e.record.fidelity(), e.record.total_cost)).collect();
    let result = RunResult {
        run: rc.clone(),
        baseline,
        hypervolume: front.hypervolume(),
        front: entries,
        reference,
        committed,
        vetoes,
        ledger: Ledger::tally(&tally, unit, rc.budget_search),
        anova: s.block_anova(),
        silent: r.silent.clone(),
        anomalies: r.anomalies.clone(),
        frozen: r.frozen.clone(),
        iterations: iteration,
        stop_reason,
        records: r.entries.len(),
    };
    r.out.write(&HistoryLine::Result(Box::new(result.clone())))?;
    Ok(result)
}

#[cfg(test)]
mod tests;
