//! The mixed-variable configuration space: flag definitions, their block
//! partition, the ±1 latent encoding, and design/neighborhood generation.
//!
//! A [`Configuration`] stores one domain index per flag, in space order.
//! Booleans use `0 = off`, `1 = on`; numeric thresholds index their sorted
//! candidate list; categorical presets index their level list.

mod sobol;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use sobol::{Sobol, MAX_DIMENSIONS as MAX_SOBOL_DIMENSIONS};

#[derive(Debug, Clone, PartialEq)]
pub enum FlagKind {
    Boolean,
    /// A threshold restricted to a finite, strictly increasing candidate set.
    Numeric {
        candidates: Vec<f64>,
    },
    /// A preset with at least two distinct levels.
    Categorical {
        levels: Vec<String>,
    },
}

impl FlagKind {
    pub fn cardinality(&self) -> usize {
        match self {
            FlagKind::Boolean => 2,
            FlagKind::Numeric { candidates } => candidates.len(),
            FlagKind::Categorical { levels } => levels.len(),
        }
    }

    /// Number of latent coordinates this kind encodes to.
    pub fn latent_dim(&self) -> usize {
        match self {
            FlagKind::Categorical { levels } => levels.len(),
            _ => 1,
        }
    }
}

/// A flag value as it appears in documents and on the wire.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FlagValue {
    Bool(bool),
    Number(f64),
    Level(String),
}

impl fmt::Display for FlagValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlagValue::Bool(b) => write!(f, "{b}"),
            FlagValue::Number(x) => write!(f, "{x}"),
            FlagValue::Level(s) => write!(f, "{s}"),
        }
    }
}

/// Telemetry counters a flag writes and consumes, plus the number of turns a
/// trajectory needs before the flag can fire at all.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CounterBinding {
    #[serde(default)]
    pub write: Vec<String>,
    #[serde(default)]
    pub consumer: Vec<String>,
    #[serde(default)]
    pub firing_turns: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlagDef {
    pub name: String,
    pub kind: FlagKind,
    /// Index into [`FlagSpace::blocks`].
    pub block: usize,
    pub warm_dependent: bool,
    /// Domain index of the default value.
    pub default: u32,
    /// Prior per-task cost overhead when the flag is on.
    pub cost_weight: f64,
    pub counters: CounterBinding,
}

impl FlagDef {
    pub fn cardinality(&self) -> usize {
        self.kind.cardinality()
    }

    /// Writes the latent coordinates of domain index `idx` into `out`.
    pub fn write_latent(&self, idx: u32, out: &mut [f64]) {
        match &self.kind {
            FlagKind::Boolean => out[0] = if idx == 1 { 1.0 } else { -1.0 },
            FlagKind::Numeric { candidates } => {
                let lo = candidates[0];
                let hi = candidates[candidates.len() - 1];
                let last = candidates.len() as u32 - 1;
                out[0] = if idx == 0 {
                    -1.0
                } else if idx == last {
                    1.0
                } else if hi > lo {
                    let mid = 0.5 * (lo + hi);
                    (candidates[idx as usize] - mid) / (0.5 * (hi - lo))
                } else {
                    0.0
                };
            }
            FlagKind::Categorical { .. } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = if k == idx as usize { 1.0 } else { -1.0 };
                }
            }
        }
    }

    pub fn value(&self, idx: u32) -> FlagValue {
        match &self.kind {
            FlagKind::Boolean => FlagValue::Bool(idx == 1),
            FlagKind::Numeric { candidates } => FlagValue::Number(candidates[idx as usize]),
            FlagKind::Categorical { levels } => FlagValue::Level(levels[idx as usize].clone()),
        }
    }

    pub fn index_of(&self, value: &FlagValue) -> Option<u32> {
        match (&self.kind, value) {
            (FlagKind::Boolean, FlagValue::Bool(b)) => Some(u32::from(*b)),
            (FlagKind::Numeric { candidates }, FlagValue::Number(x)) => {
                candidates.iter().position(|c| (c - x).abs() <= 1e-12 * c.abs().max(1.0)).map(|i| i as u32)
            }
            (FlagKind::Categorical { levels }, FlagValue::Level(s)) => {
                levels.iter().position(|l| l == s).map(|i| i as u32)
            }
            _ => None,
        }
    }

    /// Telemetry treats a flag as "on" only for booleans set to true; numeric
    /// and categorical knobs are always active and never judged silent.
    pub fn is_on(&self, idx: u32) -> bool {
        matches!(self.kind, FlagKind::Boolean) && idx == 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    /// Flag indices, in space order.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExclusionReason {
    Silent,
    Frozen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub value: u32,
    pub reason: ExclusionReason,
}

/// One assignment of every flag, as domain indices in space order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(Vec<u32>);

impl Configuration {
    pub fn from_indices(values: Vec<u32>) -> Self {
        Configuration(values)
    }

    pub fn indices(&self) -> &[u32] {
        &self.0
    }

    pub fn get(&self, flag: usize) -> u32 {
        self.0[flag]
    }

    pub fn set(&mut self, flag: usize, value: u32) {
        self.0[flag] = value;
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of flags whose assigned values differ.
    pub fn hamming(&self, other: &Configuration) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

/// The search domain: ordered flags partitioned into named blocks, plus the
/// flags currently pinned out of the search.
#[derive(Debug, Clone, PartialEq)]
pub struct FlagSpace {
    flags: Vec<FlagDef>,
    blocks: Vec<Block>,
    excluded: BTreeMap<usize, Exclusion>,
    by_name: HashMap<String, usize>,
}

// Document schema.

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDoc {
    #[serde(default)]
    flag: Vec<FlagEntry>,
    #[serde(default)]
    block: Vec<BlockEntry>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlagEntry {
    name: String,
    kind: String,
    #[serde(default)]
    candidates: Option<Vec<f64>>,
    #[serde(default)]
    levels: Option<Vec<String>>,
    #[serde(default)]
    default: Option<FlagValue>,
    #[serde(default)]
    warm_dependent: bool,
    #[serde(default)]
    cost_weight: f64,
    #[serde(default)]
    write_counters: Vec<String>,
    #[serde(default)]
    consumer_counters: Vec<String>,
    #[serde(default)]
    firing_turns: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockEntry {
    name: String,
    flags: Vec<String>,
}

impl FlagSpace {
    /// Parses a TOML space document (see the README for the format). Flag
    /// order is document order, which fixes the encoding order.
    pub fn parse(document: &str) -> Result<Self> {
        let doc: SpaceDoc = toml::from_str(document).map_err(|e| Error::Document(e.to_string()))?;

        let mut by_name = HashMap::new();
        for (i, f) in doc.flag.iter().enumerate() {
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(Error::DuplicateFlag(f.name.clone()));
            }
        }

        let mut membership: Vec<Vec<usize>> = vec![Vec::new(); doc.flag.len()];
        let mut block_names = HashSet::new();
        for (b, entry) in doc.block.iter().enumerate() {
            if !block_names.insert(entry.name.as_str()) {
                return Err(Error::Document(format!("duplicate block `{}`", entry.name)));
            }
            for name in &entry.flags {
                let &i = by_name.get(name).ok_or_else(|| Error::UnknownFlag(name.clone()))?;
                if !membership[i].contains(&b) {
                    membership[i].push(b);
                }
            }
        }

        let mut flags = Vec::with_capacity(doc.flag.len());
        for (entry, blocks) in doc.flag.into_iter().zip(&membership) {
            if blocks.len() != 1 {
                return Err(Error::Partition { flag: entry.name, count: blocks.len() });
            }
            flags.push(build_flag(entry, blocks[0])?);
        }

        let blocks = doc
            .block
            .into_iter()
            .enumerate()
            .map(|(b, entry)| Block {
                name: entry.name,
                members: (0..flags.len()).filter(|&i| flags[i].block == b).collect(),
            })
            .filter(|b| !b.members.is_empty())
            .collect::<Vec<_>>();
        // Re-index after dropping empty blocks.
        for (b, block) in blocks.iter().enumerate() {
            for &i in &block.members {
                flags[i].block = b;
            }
        }

        Ok(FlagSpace { flags, blocks, excluded: BTreeMap::new(), by_name })
    }

    /// Builds a space programmatically; `blocks` lists member names per block.
    pub fn new(flags: Vec<FlagDef>, blocks: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut by_name = HashMap::new();
        for (i, f) in flags.iter().enumerate() {
            if by_name.insert(f.name.clone(), i).is_some() {
                return Err(Error::DuplicateFlag(f.name.clone()));
            }
            validate_flag(f)?;
        }
        let mut owner: Vec<Vec<usize>> = vec![Vec::new(); flags.len()];
        for (b, (_, names)) in blocks.iter().enumerate() {
            for n in names {
                let &i = by_name.get(n).ok_or_else(|| Error::UnknownFlag(n.clone()))?;
                owner[i].push(b);
            }
        }
        let mut flags = flags;
        for (i, o) in owner.iter().enumerate() {
            if o.len() != 1 {
                return Err(Error::Partition { flag: flags[i].name.clone(), count: o.len() });
            }
            flags[i].block = o[0];
        }
        let blocks = blocks
            .into_iter()
            .enumerate()
            .map(|(b, (name, _))| Block { name, members: (0..flags.len()).filter(|&i| flags[i].block == b).collect() })
            .collect();
        Ok(FlagSpace { flags, blocks, excluded: BTreeMap::new(), by_name })
    }

    pub fn flags(&self) -> &[FlagDef] {
        &self.flags
    }

    pub fn flag(&self, i: usize) -> &FlagDef {
        &self.flags[i]
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.flags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flags.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn excluded(&self) -> &BTreeMap<usize, Exclusion> {
        &self.excluded
    }

    pub fn is_excluded(&self, flag: usize) -> bool {
        self.excluded.contains_key(&flag)
    }

    /// Flag indices still under search.
    pub fn active_flags(&self) -> Vec<usize> {
        (0..self.flags.len()).filter(|i| !self.excluded.contains_key(i)).collect()
    }

    /// Pins `flag` to `value` for the rest of the run. An earlier pin wins.
    pub fn exclude(&mut self, flag: usize, value: u32, reason: ExclusionReason) {
        assert!((value as usize) < self.flags[flag].cardinality());
        self.excluded.entry(flag).or_insert(Exclusion { value, reason });
    }

    pub fn default_config(&self) -> Configuration {
        Configuration(self.flags.iter().map(|f| f.default).collect())
    }

    /// Defaults everywhere, with every warm-dependent boolean switched off.
    pub fn baseline_config(&self) -> Configuration {
        Configuration(
            self.flags
                .iter()
                .map(|f| if f.warm_dependent && f.kind == FlagKind::Boolean { 0 } else { f.default })
                .collect(),
        )
    }

    /// Overwrites excluded flags with their pinned values.
    pub fn pin(&self, config: &Configuration) -> Configuration {
        let mut c = config.clone();
        for (&i, ex) in &self.excluded {
            c.0[i] = ex.value;
        }
        c
    }

    pub fn validate(&self, config: &Configuration) -> Result<()> {
        if config.len() != self.flags.len() {
            return Err(Error::InvalidConfig(format!(
                "configuration has {} values, space has {} flags",
                config.len(),
                self.flags.len()
            )));
        }
        for (f, &v) in self.flags.iter().zip(&config.0) {
            if v as usize >= f.cardinality() {
                return Err(Error::ValueOutOfDomain { flag: f.name.clone(), value: v.to_string() });
            }
        }
        Ok(())
    }

    /// Builds a configuration from a name → value map. Missing flags take
    /// their defaults; names not in the space are rejected.
    pub fn configuration(&self, assignment: &BTreeMap<String, FlagValue>) -> Result<Configuration> {
        let mut c = self.default_config();
        for (name, value) in assignment {
            let i = self.index_of(name).ok_or_else(|| Error::UnknownFlag(name.clone()))?;
            let idx = self.flags[i]
                .index_of(value)
                .ok_or_else(|| Error::ValueOutOfDomain { flag: name.clone(), value: value.to_string() })?;
            c.0[i] = idx;
        }
        Ok(c)
    }

    pub fn assignment(&self, config: &Configuration) -> BTreeMap<String, FlagValue> {
        self.flags.iter().zip(&config.0).map(|(f, &v)| (f.name.clone(), f.value(v))).collect()
    }

    pub fn latent_dim(&self) -> usize {
        self.flags.iter().map(|f| f.kind.latent_dim()).sum()
    }

    /// Encodes to the latent vector: booleans to ±1, numeric thresholds
    /// affinely onto [−1, 1], k-level categoricals to k coordinates of ±1 with
    /// exactly one +1.
    pub fn encode(&self, config: &Configuration) -> Result<Vec<f64>> {
        self.validate(config)?;
        let mut out = vec![0.0; self.latent_dim()];
        let mut at = 0;
        for (f, &v) in self.flags.iter().zip(&config.0) {
            let d = f.kind.latent_dim();
            f.write_latent(v, &mut out[at..at + d]);
            at += d;
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode) by nearest legal value.
    pub fn decode(&self, latent: &[f64]) -> Result<Configuration> {
        if latent.len() != self.latent_dim() {
            return Err(Error::InvalidConfig(format!(
                "latent vector has {} coordinates, expected {}",
                latent.len(),
                self.latent_dim()
            )));
        }
        let mut at = 0;
        let mut values = Vec::with_capacity(self.flags.len());
        for f in &self.flags {
            let d = f.kind.latent_dim();
            let z = &latent[at..at + d];
            let mut buf = vec![0.0; d];
            let best = (0..f.cardinality() as u32)
                .min_by(|&a, &b| {
                    f.write_latent(a, &mut buf);
                    let da: f64 = buf.iter().zip(z).map(|(x, y)| (x - y).powi(2)).sum();
                    f.write_latent(b, &mut buf);
                    let db: f64 = buf.iter().zip(z).map(|(x, y)| (x - y).powi(2)).sum();
                    da.total_cmp(&db)
                })
                .expect("nonempty domain");
            values.push(best);
            at += d;
        }
        Ok(Configuration(values))
    }

    /// Number of distinct configurations over the active flags.
    pub fn active_cardinality(&self) -> u128 {
        self.active_flags()
            .iter()
            .map(|&i| self.flags[i].cardinality() as u128)
            .fold(1u128, |acc, c| acc.saturating_mul(c))
    }

    /// Every configuration of the active flags, excluded flags pinned, in
    /// lexicographic order. Panics if the space has more than 2^24 points.
    pub fn enumerate(&self) -> Vec<Configuration> {
        let total = self.active_cardinality();
        assert!(total <= 1 << 24, "space too large to enumerate ({total} points)");
        let active = self.active_flags();
        let mut current = self.pin(&self.default_config());
        for &i in &active {
            current.0[i] = 0;
        }
        let mut out = Vec::with_capacity(total as usize);
        loop {
            out.push(current.clone());
            // Odometer increment, last active flag fastest.
            let mut carry = true;
            for &i in active.iter().rev() {
                current.0[i] += 1;
                if (current.0[i] as usize) < self.flags[i].cardinality() {
                    carry = false;
                    break;
                }
                current.0[i] = 0;
            }
            if carry {
                break;
            }
        }
        out
    }

    /// A space-filling design of `count` configurations over the active flags.
    ///
    /// Sobol points are rounded to the nearest legal value per flag; a point
    /// that rounds onto an earlier one is replaced by its nearest unused
    /// Hamming neighbor (smallest radius first, lexicographic within a
    /// radius). If `count` reaches the number of distinct configurations the
    /// full enumeration is returned instead.
    pub fn sobol_init(&self, count: usize, seed: u64) -> Result<SobolDesign> {
        if count == 0 {
            return Err(Error::InvalidConfig("sobol count must be at least 1".into()));
        }
        if count as u128 >= self.active_cardinality() {
            return Ok(SobolDesign { configs: self.enumerate(), exhaustive: true });
        }
        let active = self.active_flags();
        if active.len() > MAX_SOBOL_DIMENSIONS {
            return Err(Error::InvalidConfig(format!(
                "{} active flags exceed the {MAX_SOBOL_DIMENSIONS} supported Sobol dimensions",
                active.len()
            )));
        }
        let sobol = Sobol::scrambled(active.len(), seed);
        let base = self.pin(&self.default_config());
        let mut used = HashSet::new();
        let mut configs = Vec::with_capacity(count);
        for k in 0..count {
            let u = sobol.point(k as u32);
            let mut c = base.clone();
            for (&i, &x) in active.iter().zip(&u) {
                c.0[i] = round_unit(&self.flags[i], x);
            }
            if used.contains(&c) {
                c = self.nearest_unused(&c, &used);
            }
            used.insert(c.clone());
            configs.push(c);
        }
        Ok(SobolDesign { configs, exhaustive: false })
    }

    fn nearest_unused(&self, c: &Configuration, used: &HashSet<Configuration>) -> Configuration {
        let n_active = self.active_flags().len();
        for r in 1..=n_active {
            let shell = self.neighbors_at(c, r);
            if let Some(free) = shell.into_iter().find(|x| !used.contains(x)) {
                return free;
            }
        }
        unreachable!("count below the active cardinality leaves a free configuration")
    }

    /// All configurations at Hamming distance exactly `r` varying active flags.
    fn neighbors_at(&self, c: &Configuration, r: usize) -> BTreeSet<Configuration> {
        let active = self.active_flags();
        let mut out = BTreeSet::new();
        let mut work = c.clone();
        self.grow(&active, 0, r, &mut work, c, &mut out);
        out
    }

    fn grow(
        &self,
        active: &[usize],
        from: usize,
        left: usize,
        work: &mut Configuration,
        origin: &Configuration,
        out: &mut BTreeSet<Configuration>,
    ) {
        if left == 0 {
            out.insert(work.clone());
            return;
        }
        for pos in from..active.len() {
            if active.len() - pos < left {
                break;
            }
            let i = active[pos];
            for v in 0..self.flags[i].cardinality() as u32 {
                if v == origin.0[i] {
                    continue;
                }
                work.0[i] = v;
                self.grow(active, pos + 1, left - 1, work, origin, out);
            }
            work.0[i] = origin.0[i];
        }
    }

    /// All configurations at distance 1..=radius from `config`; excluded
    /// flags are never varied.
    pub fn hamming_neighbors(&self, config: &Configuration, radius: usize) -> BTreeSet<Configuration> {
        let mut out = BTreeSet::new();
        for r in 1..=radius.min(self.active_flags().len()) {
            out.extend(self.neighbors_at(config, r));
        }
        out
    }

    /// Number of configurations at distance exactly 0..=radius, indexed by
    /// distance (as f64 to survive large spaces).
    fn shell_sizes(&self, radius: usize) -> Vec<f64> {
        let others: Vec<f64> = self.active_flags().iter().map(|&i| (self.flags[i].cardinality() - 1) as f64).collect();
        elementary_symmetric(&others, radius)
    }

    /// Size of the closed Hamming ball (center included).
    pub fn ball_size(&self, radius: usize) -> f64 {
        self.shell_sizes(radius).iter().sum()
    }

    /// `count` distinct configurations drawn uniformly from the closed Hamming
    /// ball around `center`. Returns the whole ball when it is not larger than
    /// `count`.
    pub fn sample_ball<R: Rng>(
        &self,
        center: &Configuration,
        radius: usize,
        count: usize,
        rng: &mut R,
    ) -> Vec<Configuration> {
        if self.ball_size(radius) <= count as f64 {
            let mut all = vec![center.clone()];
            all.extend(self.hamming_neighbors(center, radius));
            return all;
        }
        let active = self.active_flags();
        let others: Vec<f64> = active.iter().map(|&i| (self.flags[i].cardinality() - 1) as f64).collect();
        let radius = radius.min(active.len());
        // suffix[p][k]: e_k over active[p..].
        let mut suffix = vec![vec![0.0; radius + 1]; active.len() + 1];
        suffix[active.len()][0] = 1.0;
        for p in (0..active.len()).rev() {
            for k in 0..=radius {
                let skip = suffix[p + 1][k];
                let take = if k > 0 { others[p] * suffix[p + 1][k - 1] } else { 0.0 };
                suffix[p][k] = skip + take;
            }
        }
        let shells = &suffix[0];
        let total: f64 = shells.iter().sum();

        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let mut u = rng.random::<f64>() * total;
            let mut d = 0;
            while d < radius && u >= shells[d] {
                u -= shells[d];
                d += 1;
            }
            let mut c = center.clone();
            let mut left = d;
            for p in 0..active.len() {
                if left == 0 {
                    break;
                }
                let take = others[p] * suffix[p + 1][left - 1];
                if rng.random::<f64>() * suffix[p][left] < take {
                    let i = active[p];
                    let mut v = rng.random_range(0..self.flags[i].cardinality() as u32 - 1);
                    if v >= center.0[i] {
                        v += 1;
                    }
                    c.0[i] = v;
                    left -= 1;
                }
            }
            if seen.insert(c.clone()) {
                out.push(c);
            }
        }
        out
    }

    /// Names of the flags of block `b`.
    pub fn block_flag_names(&self, b: usize) -> Vec<&str> {
        self.blocks[b].members.iter().map(|&i| self.flags[i].name.as_str()).collect()
    }
}

/// Result of [`FlagSpace::sobol_init`]; `exhaustive` marks a request that
/// covered the whole space and was answered by enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct SobolDesign {
    pub configs: Vec<Configuration>,
    pub exhaustive: bool,
}

fn round_unit(flag: &FlagDef, u: f64) -> u32 {
    match &flag.kind {
        FlagKind::Boolean => u32::from(u >= 0.5),
        FlagKind::Numeric { candidates } => {
            let lo = candidates[0];
            let hi = candidates[candidates.len() - 1];
            let target = lo + u * (hi - lo);
            let mut best = 0;
            for (k, c) in candidates.iter().enumerate() {
                if (c - target).abs() < (candidates[best] - target).abs() {
                    best = k;
                }
            }
            best as u32
        }
        FlagKind::Categorical { levels } => (u * (levels.len() - 1) as f64).round() as u32,
    }
}

/// e_0..=e_kmax of the given values.
fn elementary_symmetric(values: &[f64], kmax: usize) -> Vec<f64> {
    let mut e = vec![0.0; kmax + 1];
    e[0] = 1.0;
    for &x in values {
        for k in (1..=kmax).rev() {
            e[k] += x * e[k - 1];
        }
    }
    e
}

fn build_flag(entry: FlagEntry, block: usize) -> Result<FlagDef> {
    let kind = match entry.kind.as_str() {
        "boolean" | "bool" => FlagKind::Boolean,
        "numeric" | "threshold" => FlagKind::Numeric { candidates: entry.candidates.clone().unwrap_or_default() },
        "categorical" | "preset" => FlagKind::Categorical { levels: entry.levels.clone().unwrap_or_default() },
        other => return Err(Error::InvalidFlag { flag: entry.name, reason: format!("unknown kind `{other}`") }),
    };
    let mut flag = FlagDef {
        name: entry.name,
        kind,
        block,
        warm_dependent: entry.warm_dependent,
        default: 0,
        cost_weight: entry.cost_weight,
        counters: CounterBinding {
            write: entry.write_counters,
            consumer: entry.consumer_counters,
            firing_turns: entry.firing_turns,
        },
    };
    validate_flag(&flag)?;
    if let Some(d) = &entry.default {
        flag.default = flag
            .index_of(d)
            .ok_or_else(|| Error::ValueOutOfDomain { flag: flag.name.clone(), value: d.to_string() })?;
    }
    Ok(flag)
}

fn validate_flag(flag: &FlagDef) -> Result<()> {
    let bad = |reason: &str| Error::InvalidFlag { flag: flag.name.clone(), reason: reason.into() };
    match &flag.kind {
        FlagKind::Boolean => {}
        FlagKind::Numeric { candidates } => {
            if candidates.is_empty() {
                return Err(Error::EmptyDomain(flag.name.clone()));
            }
            if candidates.iter().any(|c| !c.is_finite()) {
                return Err(bad("candidates must be finite"));
            }
            if candidates.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("candidates must be strictly increasing"));
            }
        }
        FlagKind::Categorical { levels } => {
            if levels.is_empty() {
                return Err(Error::EmptyDomain(flag.name.clone()));
            }
            let distinct: HashSet<_> = levels.iter().collect();
            if levels.len() < 2 || distinct.len() != levels.len() {
                return Err(bad("categorical flags need at least two distinct levels"));
            }
        }
    }
    if (flag.default as usize) >= flag.cardinality() {
        return Err(bad("default outside the domain"));
    }
    if !(flag.cost_weight >= 0.0 && flag.cost_weight.is_finite()) {
        return Err(bad("cost_weight must be a nonnegative number"));
    }
    if flag.warm_dependent && flag.counters.consumer.is_empty() {
        return Err(bad("warm-dependent flags need at least one consumer counter"));
    }
    Ok(())
}

#[cfg(test)]
mod tests;
