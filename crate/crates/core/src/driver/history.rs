//! Line-delimited run history: one self-describing JSON object per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Phase, RunConfig, RunResult};
use crate::error::{Error, Result};
use crate::evaluator::{Correction, EvaluationRecord};
use crate::flagspace::{ExclusionReason, FlagSpace, FlagValue};
use crate::telemetry::TelemetrySnapshot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub run: RunConfig,
    pub flags: Vec<String>,
    pub suite_size: usize,
}

/// One evaluation as written to the history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub index: usize,
    pub phase: Phase,
    pub iteration: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<usize>,
    pub config: BTreeMap<String, FlagValue>,
    pub fidelity: usize,
    pub tasks: Vec<String>,
    pub outcomes: Vec<u8>,
    pub costs: Vec<f64>,
    pub total_cost: f64,
    pub raw_pass_rate: f64,
    pub session_index: u64,
    pub seed: u64,
    pub counters: BTreeMap<String, f64>,
    pub turn_count: u64,
    pub correction: Option<Correction>,
    /// Running total of recorded cost including this record.
    pub cumulative_cost: f64,
}

impl HistoryRecord {
    pub fn from_record(
        index: usize,
        phase: Phase,
        iteration: usize,
        region: Option<usize>,
        record: &EvaluationRecord,
        space: &FlagSpace,
        cumulative_cost: f64,
    ) -> Self {
        HistoryRecord {
            index,
            phase,
            iteration,
            region,
            config: space.assignment(&record.config),
            fidelity: record.fidelity(),
            tasks: record.tasks.clone(),
            outcomes: record.outcomes.iter().map(|&o| u8::from(o)).collect(),
            costs: record.costs.clone(),
            total_cost: record.total_cost,
            raw_pass_rate: record.raw_pass_rate,
            session_index: record.session_index,
            seed: record.seed,
            counters: record.telemetry.counters.clone(),
            turn_count: record.telemetry.turn_count,
            correction: record.correction,
            cumulative_cost,
        }
    }

    /// Rebuilds the in-memory record. Flags missing from the line take
    /// their defaults; flags the space does not know are ignored.
    pub fn to_record(&self, space: &FlagSpace) -> Result<EvaluationRecord> {
        let mut config = space.default_config();
        for (i, flag) in space.flags().iter().enumerate() {
            if let Some(v) = self.config.get(&flag.name) {
                let idx = flag
                    .index_of(v)
                    .ok_or_else(|| Error::ValueOutOfDomain { flag: flag.name.clone(), value: v.to_string() })?;
                config.set(i, idx);
            }
        }
        if self.outcomes.len() != self.tasks.len() || self.costs.len() != self.tasks.len() {
            return Err(Error::History(format!("record {} has mismatched task vectors", self.index)));
        }
        Ok(EvaluationRecord {
            config,
            tasks: self.tasks.clone(),
            outcomes: self.outcomes.iter().map(|&o| o != 0).collect(),
            costs: self.costs.clone(),
            raw_pass_rate: self.raw_pass_rate,
            total_cost: self.total_cost,
            session_index: self.session_index,
            seed: self.seed,
            telemetry: TelemetrySnapshot { counters: self.counters.clone(), turn_count: self.turn_count },
            correction: self.correction,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExclusionEvent {
    /// Index of the record after which the flag was pinned.
    pub after_record: usize,
    pub flag: String,
    pub value: FlagValue,
    pub reason: ExclusionReason,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionEvent {
    pub iteration: usize,
    pub id: usize,
    pub center: BTreeMap<String, FlagValue>,
    pub radius: usize,
    pub alive: bool,
    pub event: RegionChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionChange {
    Placed,
    Improved,
    NotImproved,
    EmptyPool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistoryLine {
    Header(Header),
    Record(HistoryRecord),
    Exclusion(ExclusionEvent),
    Region(RegionEvent),
    Result(Box<RunResult>),
}

/// Appends one line per event and flushes, so a crash loses at most the
/// line being written.
pub struct HistoryWriter<W: Write> {
    out: W,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(out: W) -> Self {
        HistoryWriter { out }
    }

    pub fn write(&mut self, line: &HistoryLine) -> Result<()> {
        serde_json::to_writer(&mut self.out, line)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parsed history file.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub lines: Vec<HistoryLine>,
}

impl History {
    pub fn parse<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = Vec::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed = serde_json::from_str(&line).map_err(|e| Error::History(format!("line {}: {e}", n + 1)))?;
            lines.push(parsed);
        }
        Ok(History { lines })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(BufReader::new(File::open(path)?))
    }

    pub fn header(&self) -> Option<&Header> {
        self.lines.iter().find_map(|l| match l {
            HistoryLine::Header(h) => Some(h),
            _ => None,
        })
    }

    pub fn records(&self) -> impl Iterator<Item = &HistoryRecord> {
        self.lines.iter().filter_map(|l| match l {
            HistoryLine::Record(r) => Some(r),
            _ => None,
        })
    }

    pub fn result(&self) -> Option<&RunResult> {
        self.lines.iter().rev().find_map(|l| match l {
            HistoryLine::Result(r) => Some(r.as_ref()),
            _ => None,
        })
    }
}

/// An evaluation carried over from an earlier run.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportedRecord {
    pub source: String,
    pub record: EvaluationRecord,
}

/// Projects earlier runs' records onto `space`: missing flags take their
/// defaults, unknown flags are dropped, and corrected variances are
/// multiplied by `lambda`.
pub fn load_meta_history<P: AsRef<Path>>(paths: &[P], space: &FlagSpace, lambda: f64) -> Result<Vec<ImportedRecord>> {
    if !(lambda >= 1.0) {
        return Err(Error::InvalidConfig(format!("meta variance inflation must be at least 1, got {lambda}")));
    }
    let names: BTreeSet<&str> = space.flags().iter().map(|f| f.name.as_str()).collect();
    let mut out = Vec::new();
    for path in paths {
        let path = path.as_ref();
        let history = History::read(path)?;
        let log: BTreeSet<String> = match history.header() {
            Some(h) => h.flags.iter().cloned().collect(),
            None => history.records().flat_map(|r| r.config.keys().cloned()).collect(),
        };
        if !log.iter().any(|n| names.contains(n.as_str())) {
            return Err(Error::NoOverlap {
                log: log.into_iter().collect(),
                space: names.iter().map(|s| s.to_string()).collect(),
            });
        }
        for r in history.records() {
            let mut record = r.to_record(space)?;
            if let Some(c) = record.correction.as_mut() {
                c.variance *= lambda;
            }
            out.push(ImportedRecord { source: path.display().to_string(), record });
        }
    }
    Ok(out)
}
