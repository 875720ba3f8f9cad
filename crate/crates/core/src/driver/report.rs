use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Phase, RunResult};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    pub phase: Phase,
    pub evaluations: usize,
    pub fidelities: Vec<usize>,
    pub tasks: usize,
    pub cost: f64,
}

/// Search-cost accounting. Costs are raw adapter units; one budget unit is
/// the cost of the full-suite baseline evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ledger {
    pub unit_cost: f64,
    pub budget_units: f64,
    pub rows: Vec<LedgerRow>,
    pub total_cost: f64,
}

impl Ledger {
    /// Rows in phase order from `(phase, fidelity, cost)` in history order.
    pub fn tally(entries: &[(Phase, usize, f64)], unit_cost: f64, budget_units: f64) -> Self {
        let mut rows: Vec<LedgerRow> = Vec::new();
        for phase in [Phase::Baseline, Phase::Init, Phase::Search, Phase::Preflight] {
            let mine: Vec<&(Phase, usize, f64)> = entries.iter().filter(|e| e.0 == phase).collect();
            if mine.is_empty() {
                continue;
            }
            let mut fidelities: Vec<usize> = mine.iter().map(|e| e.1).collect();
            fidelities.sort_unstable();
            fidelities.dedup();
            rows.push(LedgerRow {
                phase,
                evaluations: mine.len(),
                fidelities,
                tasks: mine.iter().map(|e| e.1).sum(),
                cost: mine.iter().map(|e| e.2).sum(),
            });
        }
        Ledger { unit_cost, budget_units, rows, total_cost: entries.iter().map(|e| e.2).sum() }
    }

    pub fn total_units(&self) -> f64 {
        self.total_cost / self.unit_cost
    }

    pub fn evaluations(&self) -> usize {
        self.rows.iter().map(|r| r.evaluations).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Text,
    Machine,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "text" => Ok(Format::Text),
            "machine" => Ok(Format::Machine),
            other => Err(format!("unknown report format `{other}` (text or machine)")),
        }
    }
}

pub fn report(rr: &RunResult, format: Format) -> Result<String> {
    match format {
        Format::Machine => Ok(serde_json::to_string_pretty(rr)?),
        Format::Text => Ok(render_text(rr)),
    }
}

/// Inverse of the machine format.
pub fn parse_report(document: &str) -> Result<RunResult> {
    Ok(serde_json::from_str(document)?)
}

fn fidelity_label(fs: &[usize]) -> String {
    let parts: Vec<String> = fs.iter().map(|m| m.to_string()).collect();
    format!("m={}", parts.join(","))
}

fn assignment_label(config: &std::collections::BTreeMap<String, crate::flagspace::FlagValue>) -> String {
    let on: Vec<String> = config
        .iter()
        .filter_map(|(k, v)| match v {
            crate::flagspace::FlagValue::Bool(false) => None,
            crate::flagspace::FlagValue::Bool(true) => Some(k.clone()),
            other => Some(format!("{k}={other}")),
        })
        .collect();
    if on.is_empty() {
        "(flagless)".to_string()
    } else {
        on.join(" + ")
    }
}

fn render_text(rr: &RunResult) -> String {
    let mut s = String::new();
    let b = &rr.baseline;
    let _ = writeln!(s, "HARBOR run (seed {}, {} iterations, stopped: {})", rr.run.seed, rr.iterations, rr.stop_reason);
    let _ = writeln!(
        s,
        "baseline R0 = {:.4} ({}/{} passes, {:.0}% Wilson [{:.4}, {:.4}]), variance {:.6}",
        b.rate,
        b.passes,
        b.trials,
        rr.run.wilson_level * 100.0,
        b.wilson.0,
        b.wilson.1,
        b.variance
    );

    let _ = writeln!(
        s,
        "\nPareto front (safe, within deployment budget; reference ({:.4}, {:.4}), hypervolume {:.4})",
        rr.reference.0, rr.reference.1, rr.hypervolume
    );
    let _ =
        writeln!(s, "  {:>8} {:>8} {:>8} {:>9} {:>7}  {:<19}  config", "mean", "sd", "lcb", "cost", "passes", "wilson");
    for p in &rr.front {
        let _ = writeln!(
            s,
            "  {:>8.4} {:>8.4} {:>8.4} {:>9.4} {:>3}/{:<3}  [{:.4}, {:.4}]   {}",
            p.mean,
            p.sd,
            p.lower_bound,
            p.cost,
            p.passes,
            p.trials,
            p.wilson.0,
            p.wilson.1,
            assignment_label(&p.config)
        );
    }

    let _ = writeln!(s, "\nCommitted configuration");
    match &rr.committed {
        Some(c) => {
            let _ = writeln!(s, "  {}", assignment_label(&c.config));
            for v in &c.verdicts {
                let _ = writeln!(s, "    {} {}: {}", v.status, v.flag, v.reason);
            }
        }
        None => {
            let _ = writeln!(s, "  none: every front candidate was vetoed");
        }
    }
    if !rr.vetoes.is_empty() {
        let _ = writeln!(s, "  vetoed:");
        for v in &rr.vetoes {
            let _ = writeln!(s, "    {}: {}", assignment_label(&v.config), v.reason);
        }
    }

    let l = &rr.ledger;
    let _ = writeln!(s, "\nSearch-cost ledger (1 unit = {:.6} cost)", l.unit_cost);
    let _ = writeln!(
        s,
        "  {:<10} {:>7} {:<14} {:>7} {:>12} {:>9}",
        "phase", "# evals", "fidelity", "tasks", "cost", "units"
    );
    for r in &l.rows {
        let _ = writeln!(
            s,
            "  {:<10} {:>7} {:<14} {:>7} {:>12.4} {:>9.3}",
            format!("{:?}", r.phase).to_lowercase(),
            r.evaluations,
            fidelity_label(&r.fidelities),
            r.tasks,
            r.cost,
            r.cost / l.unit_cost
        );
    }
    let _ = writeln!(
        s,
        "  {:<10} {:>7} {:<14} {:>7} {:>12.4} {:>9.3}",
        "total",
        l.evaluations(),
        "",
        l.rows.iter().map(|r| r.tasks).sum::<usize>(),
        l.total_cost,
        l.total_units()
    );
    let _ = writeln!(s, "  {:.3} of a nominal {}", l.total_units(), l.budget_units);

    let _ = writeln!(s, "\nBlock ANOVA: {}", rr.anova.render());

    let _ = writeln!(s, "\nSilent flags");
    if rr.silent.is_empty() {
        let _ = writeln!(s, "  none");
    }
    for f in &rr.silent {
        let _ = writeln!(
            s,
            "  {} after record {}: on in {} records, mean consumer {:.3}",
            f.evidence.flag, f.after_record, f.evidence.on_observations, f.evidence.mean_consumer
        );
    }
    let _ = writeln!(s, "\nAnomalies");
    if rr.anomalies.is_empty() {
        let _ = writeln!(s, "  none");
    }
    for a in &rr.anomalies {
        let _ = writeln!(s, "  record {} {}: {}", a.record, a.flag, a.detail);
    }
    let _ = writeln!(s, "\nFrozen blocks");
    if rr.frozen.is_empty() {
        let _ = writeln!(s, "  none");
    }
    for f in &rr.frozen {
        let _ = writeln!(s, "  {} after record {}: {}", f.block, f.after_record, assignment_label(&f.pins));
    }
    s
}
