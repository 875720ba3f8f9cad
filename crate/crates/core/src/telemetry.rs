//! Counter bookkeeping and the structural-liveness checks built on it:
//! silent-flag detection, the preflight smoke gate, and write/read
//! asymmetry.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::evaluator::{evaluate, Adapter, EvaluationRecord};
use crate::flagspace::{Configuration, FlagSpace};

/// Counters summed over the tasks of one evaluation, with the total number
/// of agent turns they were collected over.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub counters: BTreeMap<String, f64>,
    pub turn_count: u64,
}

impl TelemetrySnapshot {
    pub fn absorb(&mut self, counters: &BTreeMap<String, f64>, turns: u64) {
        for (k, v) in counters {
            *self.counters.entry(k.clone()).or_insert(0.0) += v;
        }
        self.turn_count += turns;
    }

    /// Sum of the named counters; missing names count as zero.
    pub fn total(&self, names: &[String]) -> f64 {
        names.iter().filter_map(|n| self.counters.get(n)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Status {
    Green,
    Yellow,
    Red,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Green => "GREEN",
            Status::Yellow => "YELLOW",
            Status::Red => "RED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlagVerdict {
    pub flag: String,
    pub status: Status,
    pub reason: String,
}

/// Evidence for a flag judged silent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SilentFlag {
    pub flag: String,
    pub on_observations: usize,
    pub mean_consumer: f64,
}

/// Flags that were on in at least `n_silent` records while their consumer
/// counters averaged below `epsilon`. Already-excluded flags and flags with
/// no consumer binding are skipped; off-records are ignored.
pub fn detect_silent(
    history: &[EvaluationRecord],
    space: &FlagSpace,
    epsilon: f64,
    n_silent: usize,
) -> Vec<(usize, SilentFlag)> {
    let mut out = Vec::new();
    for (i, flag) in space.flags().iter().enumerate() {
        if space.is_excluded(i) || flag.counters.consumer.is_empty() {
            continue;
        }
        let readings: Vec<f64> = history
            .iter()
            .filter(|r| flag.is_on(r.config.get(i)))
            .map(|r| r.telemetry.total(&flag.counters.consumer))
            .collect();
        if readings.len() < n_silent.max(1) {
            continue;
        }
        let mean = readings.iter().sum::<f64>() / readings.len() as f64;
        if mean < epsilon {
            out.push((i, SilentFlag { flag: flag.name.clone(), on_observations: readings.len(), mean_consumer: mean }));
        }
    }
    out
}

/// Per-flag verdicts for one smoke trajectory. `thresholds` overrides the
/// firing turn counts bound in the space.
pub fn smoke_verdicts(
    config: &Configuration,
    space: &FlagSpace,
    telemetry: &TelemetrySnapshot,
    thresholds: &BTreeMap<String, u32>,
) -> Vec<FlagVerdict> {
    let mut out = Vec::new();
    for (i, flag) in space.flags().iter().enumerate() {
        if !flag.is_on(config.get(i)) {
            continue;
        }
        let threshold = thresholds.get(&flag.name).copied().unwrap_or(flag.counters.firing_turns);
        let turns = telemetry.turn_count;
        let (status, reason) = if flag.counters.consumer.is_empty() {
            (Status::Yellow, "no consumer counter bound".to_string())
        } else {
            let consumed = telemetry.total(&flag.counters.consumer);
            if consumed > 0.0 {
                (Status::Green, format!("consumer counters {consumed}"))
            } else if turns < u64::from(threshold) {
                (Status::Yellow, format!("zero consumer counters after {turns} turns; fires at {threshold}"))
            } else {
                (Status::Red, format!("zero consumer counters after {turns} turns (threshold {threshold})"))
            }
        };
        out.push(FlagVerdict { flag: flag.name.clone(), status, reason });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmokeReport {
    pub verdicts: Vec<FlagVerdict>,
    pub passed: bool,
    pub veto_reason: Option<String>,
}

/// Runs the single smoke task and grades every on-flag. Any RED verdict, or
/// a failed smoke evaluation, vetoes the configuration.
#[allow(clippy::too_many_arguments)]
pub fn preflight_smoke(
    adapter: &dyn Adapter,
    space: &FlagSpace,
    config: &Configuration,
    smoke_task: &str,
    thresholds: &BTreeMap<String, u32>,
    session_index: u64,
    seed: u64,
) -> (SmokeReport, Option<EvaluationRecord>) {
    let tasks = [smoke_task.to_string()];
    match evaluate(adapter, space, config, &tasks, session_index, seed, 1) {
        Ok(record) => {
            let verdicts = smoke_verdicts(config, space, &record.telemetry, thresholds);
            let red: Vec<&str> = verdicts.iter().filter(|v| v.status == Status::Red).map(|v| v.flag.as_str()).collect();
            let veto_reason = (!red.is_empty()).then(|| format!("RED flags: {}", red.join(", ")));
            (SmokeReport { passed: veto_reason.is_none(), verdicts, veto_reason }, Some(record))
        }
        Err(e) => (
            SmokeReport {
                verdicts: Vec::new(),
                passed: false,
                veto_reason: Some(format!("smoke evaluation failed: {e}")),
            },
            None,
        ),
    }
}

/// On-flags whose write counters moved while their consumer counters stayed
/// at zero. Flags silent on both sides belong to [`detect_silent`].
pub fn detect_asymmetry(record: &EvaluationRecord, space: &FlagSpace) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for (i, flag) in space.flags().iter().enumerate() {
        if !flag.is_on(record.config.get(i)) || flag.counters.write.is_empty() {
            continue;
        }
        let written = record.telemetry.total(&flag.counters.write);
        let consumed = record.telemetry.total(&flag.counters.consumer);
        if written > 0.0 && consumed == 0.0 {
            out.push((
                flag.name.clone(),
                format!("writes {} > 0 but consumers {} read 0", written, flag.counters.consumer.join("+")),
            ));
        }
    }
    out
}
