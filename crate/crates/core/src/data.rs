//! Tabular ingestion, sensitive-attribute groups and scheduled resampling.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// One combination of sensitive-attribute level codes.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GroupKey(pub Vec<i64>);

impl GroupKey {
    pub fn new(values: Vec<i64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[i64] {
        &self.0
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(i64::to_string).collect();
        write!(f, "({})", parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    /// Sensitive attribute level codes.
    pub a: Vec<i64>,
    /// Encoded, standardized features.
    pub x: Vec<f64>,
    pub y: u8,
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    #[default]
    Comma,
    Whitespace,
    Semicolon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Feature,
    Sensitive,
    Label,
}

/// How a raw column is turned into numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Encoding {
    /// Parsed as a real number and standardized (features only).
    Numeric,
    /// One-hot for features; level code (sorted level order) for sensitive columns.
    Categorical,
    /// Sensitive column restricted to the listed levels, coded in list order.
    /// Rows with any other value are dropped.
    Levels { levels: Vec<String> },
    /// Numeric column coded 0 below `at`, 1 at or above.
    Threshold { at: f64 },
    /// Numeric column coded 0 at or below the median of the loaded rows, 1 above.
    MedianThreshold,
    /// Numeric column coded 1 strictly above the `q`-quantile of the loaded rows.
    QuantileThreshold { q: f64 },
    /// Label column: 1 iff the trimmed value is one of `values`.
    Positive { values: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub role: Role,
    pub encoding: Encoding,
}

/// Column specification used by [`load_dataset`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    #[serde(default)]
    pub delimiter: Delimiter,
    /// Column names for files without a header row. When absent the first
    /// line of the file is the header.
    #[serde(default)]
    pub column_names: Option<Vec<String>>,
    /// Cell values treated as missing; rows containing one in a used column
    /// are dropped.
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    pub columns: Vec<ColumnSpec>,
}

fn default_missing() -> Vec<String> {
    vec!["?".into(), String::new()]
}

impl Schema {
    fn validate(&self) -> Result<()> {
        let labels = self.columns.iter().filter(|c| c.role == Role::Label).count();
        if labels != 1 {
            return Err(Error::Schema(format!("expected exactly one label column, found {labels}")));
        }
        let mut seen = BTreeSet::new();
        for c in &self.columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!("column {} listed twice", c.name)));
            }
            let ok = match (c.role, &c.encoding) {
                (Role::Feature, Encoding::Numeric | Encoding::Categorical) => true,
                (Role::Feature, Encoding::Threshold { .. } | Encoding::MedianThreshold) => true,
                (Role::Sensitive, Encoding::Categorical | Encoding::Levels { .. }) => true,
                (
                    Role::Sensitive,
                    Encoding::Threshold { .. } | Encoding::MedianThreshold | Encoding::QuantileThreshold { .. },
                ) => true,
                (Role::Label, Encoding::Positive { .. } | Encoding::Threshold { .. }) => true,
                (Role::Label, Encoding::QuantileThreshold { .. } | Encoding::MedianThreshold) => true,
                _ => false,
            };
            if !ok {
                return Err(Error::Schema(format!(
                    "encoding {:?} not valid for {:?} column {}",
                    c.encoding, c.role, c.name
                )));
            }
            if let Encoding::QuantileThreshold { q } = c.encoding {
                if !(0.0..=1.0).contains(&q) {
                    return Err(Error::Schema(format!("quantile {q} outside [0, 1] for {}", c.name)));
                }
            }
        }
        Ok(())
    }
}

/// Names and levels of the encoded columns of a loaded dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub feature_names: Vec<String>,
    pub sensitive: Vec<SensitiveAttr>,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitiveAttr {
    pub name: String,
    /// Human-readable level names indexed by level code.
    pub levels: Vec<String>,
}

impl DatasetSchema {
    pub fn group_label(&self, key: &GroupKey) -> String {
        key.values()
            .iter()
            .zip(&self.sensitive)
            .map(|(&code, attr)| {
                let level = attr
                    .levels
                    .get(code as usize)
                    .cloned()
                    .unwrap_or_else(|| code.to_string());
                format!("{}={}", attr.name, level)
            })
            .collect::<Vec<_>>()
            .join(",")
    }

    /// Inverse of [`DatasetSchema::group_label`]; accepts `name=level` pairs
    /// separated by commas in any order.
    pub fn parse_group(&self, text: &str) -> Result<GroupKey> {
        let mut codes = vec![None; self.sensitive.len()];
        for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, level) = part
                .split_once('=')
                .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
            let idx = self
                .sensitive
                .iter()
                .position(|a| a.name == name.trim())
                .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
            let code = self.sensitive[idx]
                .levels
                .iter()
                .position(|l| l == level.trim())
                .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
            codes[idx] = Some(code as i64);
        }
        let values = codes
            .into_iter()
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
        Ok(GroupKey(values))
    }
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
    groups: BTreeMap<GroupKey, Vec<usize>>,
    schema: DatasetSchema,
}

impl Dataset {
    /// Builds a dataset and its group partition; validates record shapes.
    pub fn from_records(records: Vec<Record>, schema: DatasetSchema) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Input("dataset has no records".into()));
        }
        let k = schema.sensitive.len();
        let d = schema.feature_names.len();
        let mut groups: BTreeMap<GroupKey, Vec<usize>> = BTreeMap::new();
        for (i, r) in records.iter().enumerate() {
            if r.a.len() != k {
                return Err(Error::Row {
                    row: i,
                    message: format!("expected {k} sensitive values, got {}", r.a.len()),
                });
            }
            if r.x.len() != d {
                return Err(Error::Row {
                    row: i,
                    message: format!("expected {d} features, got {}", r.x.len()),
                });
            }
            if r.y > 1 {
                return Err(Error::Row {
                    row: i,
                    message: format!("label {} is not binary", r.y),
                });
            }
            if r.x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Row {
                    row: i,
                    message: "non-finite feature".into(),
                });
            }
            groups.entry(GroupKey(r.a.clone())).or_default().push(i);
        }
        Ok(Self {
            records,
            groups,
            schema,
        })
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn groups(&self) -> &BTreeMap<GroupKey, Vec<usize>> {
        &self.groups
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    pub fn group_sizes(&self) -> BTreeMap<GroupKey, usize> {
        self.groups.iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// Fraction of `y = 1` per group.
    pub fn positive_rates(&self) -> BTreeMap<GroupKey, f64> {
        self.groups
            .iter()
            .map(|(k, idx)| {
                let pos = idx.iter().filter(|&&i| self.records[i].y == 1).count();
                (k.clone(), pos as f64 / idx.len() as f64)
            })
            .collect()
    }

    /// New dataset holding the given records (ascending index order is kept).
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut idx = indices.to_vec();
        idx.sort_unstable();
        idx.dedup();
        let records = idx.iter().map(|&i| self.records[i].clone()).collect();
        Self::from_records(records, self.schema.clone())
    }

    /// Uniform subsample of `n` records without replacement.
    pub fn subsample(&self, n: usize, seed: u64) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let mut rng = seeds::rng_from(seed, seeds::STREAM_SUBSAMPLE);
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(n);
        self.subset(&idx)
    }

    /// Split stratified by (group, label); `train_fraction` of every stratum
    /// (rounded) goes to the first dataset.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(Self, Self)> {
        if !(0.0..1.0).contains(&train_fraction) || train_fraction == 0.0 {
            return Err(Error::Parameter(format!("train fraction {train_fraction} not in (0, 1)")));
        }
        let mut rng = seeds::rng_from(seed, seeds::STREAM_SPLIT);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for idx in self.groups.values() {
            for label in 0..=1u8 {
                let mut stratum: Vec<usize> =
                    idx.iter().copied().filter(|&i| self.records[i].y == label).collect();
                stratum.shuffle(&mut rng);
                let cut = (stratum.len() as f64 * train_fraction).round() as usize;
                train.extend_from_slice(&stratum[..cut]);
                test.extend_from_slice(&stratum[cut..]);
            }
        }
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

fn read_rows(text: &str, schema: &Schema) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rows: Vec<Vec<String>> = Vec::new();
    match schema.delimiter {
        Delimiter::Whitespace => {
            for line in text.lines() {
                if line.trim().is_empty() {
                    continue;
                }
                rows.push(line.split_whitespace().map(str::to_string).collect());
            }
        }
        Delimiter::Comma | Delimiter::Semicolon => {
            let delim = if schema.delimiter == Delimiter::Comma { b',' } else { b';' };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(delim)
                .has_headers(false)
                .flexible(true)
                .trim(csv::Trim::All)
                .from_reader(text.as_bytes());
            for rec in reader.records() {
                let rec = rec?;
                if rec.iter().all(|c| c.is_empty()) {
                    continue;
                }
                rows.push(rec.iter().map(str::to_string).collect());
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Input("file is empty".into()));
    }
    let header = match &schema.column_names {
        Some(names) => names.clone(),
        None => rows.remove(0),
    };
    if rows.is_empty() {
        return Err(Error::Input("file has a header but no records".into()));
    }
    Ok((header, rows))
}

fn parse_number(cell: &str, row: usize, column: &str) -> Result<f64> {
    // some files carry a trailing period on numeric cells
    let trimmed = cell.trim().trim_end_matches('.');
    let v: f64 = trimmed.parse().map_err(|_| Error::Row {
        row,
        message: format!("cannot parse {cell:?} in column {column} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Row {
            row,
            message: format!("non-finite value in column {column}"),
        });
    }
    Ok(v)
}

fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// How one used column contributes to a record, resolved after a full pass.
enum Plan {
    Numeric { mean: f64, scale: f64 },
    OneHot { levels: Vec<String> },
    Binary { cut: f64, inclusive: bool },
    Coded { levels: Vec<String> },
    Positive { values: Vec<String> },
}

impl Plan {
    fn binary_label(cut: f64, inclusive: bool, v: f64) -> i64 {
        i64::from(if inclusive { v >= cut } else { v > cut })
    }
}

/// Loads a delimiter-separated file according to `schema`.
///
/// Numeric features are standardized on the loaded rows, categorical features
/// are one-hot encoded, and groups are formed from the realized combinations
/// of sensitive values. Rows with missing cells in a used column, or with a
/// sensitive value outside an explicit level list, are dropped.
pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_dataset_from_str(&text, schema)
}

pub fn load_dataset_from_str(text: &str, schema: &Schema) -> Result<Dataset> {
    schema.validate()?;
    let (header, rows) = read_rows(text, schema)?;
    let position: HashMap<&str, usize> =
        header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let cols: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| {
            position
                .get(c.name.as_str())
                .copied()
                .ok_or_else(|| Error::Schema(format!("missing column {}", c.name)))
        })
        .collect::<Result<_>>()?;

    // Keep rows that are complete in the used columns and pass level filters.
    let mut kept: Vec<(usize, Vec<&str>)> = Vec::with_capacity(rows.len());
    'rows: for (r, row) in rows.iter().enumerate() {
        let mut cells = Vec::with_capacity(cols.len());
        for (spec, &c) in schema.columns.iter().zip(&cols) {
            let cell = match row.get(c) {
                Some(cell) => cell.trim(),
                None => {
                    return Err(Error::Row {
                        row: r,
                        message: format!("row has {} cells, column {} missing", row.len(), spec.name),
                    })
                }
            };
            if schema.missing.iter().any(|m| m == cell) {
                continue 'rows;
            }
            if let (Role::Sensitive, Encoding::Levels { levels }) = (spec.role, &spec.encoding) {
                if !levels.iter().any(|l| l == cell) {
                    continue 'rows;
                }
            }
            cells.push(cell);
        }
        kept.push((r, cells));
    }
    if kept.is_empty() {
        return Err(Error::Input("no complete rows after filtering".into()));
    }

    // Resolve column plans from the kept rows.
    let mut plans = Vec::with_capacity(schema.columns.len());
    for (c, spec) in schema.columns.iter().enumerate() {
        let numbers = || -> Result<Vec<f64>> {
            kept.iter().map(|(r, cells)| parse_number(cells[c], *r, &spec.name)).collect()
        };
        let plan = match (&spec.encoding, spec.role) {
            (Encoding::Numeric, _) => {
                let v = numbers()?;
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
                Plan::Numeric { mean, scale }
            }
            (Encoding::Categorical, Role::Feature) => {
                let levels: BTreeSet<&str> = kept.iter().map(|(_, cells)| cells[c]).collect();
                Plan::OneHot {
                    levels: levels.into_iter().map(str::to_string).collect(),
                }
            }
            (Encoding::Categorical, _) => {
                let levels: BTreeSet<&str> = kept.iter().map(|(_, cells)| cells[c]).collect();
                Plan::Coded {
                    levels: levels.into_iter().map(str::to_string).collect(),
                }
            }
            (Encoding::Levels { levels }, _) => Plan::Coded {
                levels: levels.clone(),
            },
            (Encoding::Threshold { at }, _) => Plan::Binary {
                cut: *at,
                inclusive: true,
            },
            (Encoding::MedianThreshold, _) => Plan::Binary {
                cut: quantile_of(&mut numbers()?, 0.5),
                inclusive: false,
            },
            (Encoding::QuantileThreshold { q }, _) => Plan::Binary {
                cut: quantile_of(&mut numbers()?, *q),
                inclusive: false,
            },
            (Encoding::Positive { values }, _) => Plan::Positive {
                values: values.clone(),
            },
        };
        plans.push(plan);
    }

    let mut feature_names = Vec::new();
    let mut sensitive = Vec::new();
    let mut label = String::new();
    for (spec, plan) in schema.columns.iter().zip(&plans) {
        match spec.role {
            Role::Feature => match plan {
                Plan::OneHot { levels } => {
                    feature_names.extend(levels.iter().map(|l| format!("{}={}", spec.name, l)))
                }
                _ => feature_names.push(spec.name.clone()),
            },
            Role::Sensitive => {
                let levels = match plan {
                    Plan::Coded { levels } => levels.clone(),
                    Plan::Binary { cut, inclusive: true } => vec![format!("<{cut}"), format!(">={cut}")],
                    Plan::Binary { cut, inclusive: false } => vec![format!("<={cut}"), format!(">{cut}")],
                    _ => unreachable!("validated"),
                };
                sensitive.push(SensitiveAttr {
                    name: spec.name.clone(),
                    levels,
                });
            }
            Role::Label => label = spec.name.clone(),
        }
    }

    let mut records = Vec::with_capacity(kept.len());
    for (r, cells) in &kept {
        let mut a = Vec::with_capacity(sensitive.len());
        let mut x = Vec::with_capacity(feature_names.len());
        let mut y = 0u8;
        for ((spec, plan), cell) in schema.columns.iter().zip(&plans).zip(cells) {
            let value: Vec<f64> = match plan {
                Plan::Numeric { mean, scale } => {
                    vec![(parse_number(cell, *r, &spec.name)? - mean) / scale]
                }
                Plan::OneHot { levels } => levels.iter().map(|l| f64::from(u8::from(l == cell))).collect(),
                Plan::Binary { cut, inclusive } => {
                    let v = parse_number(cell, *r, &spec.name)?;
                    vec![Plan::binary_label(*cut, *inclusive, v) as f64]
                }
                Plan::Coded { levels } => {
                    let code = levels.iter().position(|l| l == cell).ok_or_else(|| Error::Row {
                        row: *r,
                        message: format!("unknown level {cell:?} in {}", spec.name),
                    })?;
                    vec![code as f64]
                }
                Plan::Positive { values } => {
                    let cell = cell.trim_end_matches('.');
                    vec![f64::from(u8::from(
                        values.iter().any(|v| v.trim_end_matches('.') == cell),
                    ))]
                }
            };
            match spec.role {
                Role::Feature => x.extend(value),
                Role::Sensitive => a.push(value[0] as i64),
                Role::Label => y = value[0] as u8,
            }
        }
        records.push(Record { a, x, y });
    }

    Dataset::from_records(
        records,
        DatasetSchema {
            feature_names,
            sensitive,
            label,
        },
    )
}

// ---------------------------------------------------------------------------
// Resampling and schedules
// ---------------------------------------------------------------------------

/// Positive-class rate targets for a subset of groups.
pub type Rates = BTreeMap<GroupKey, f64>;

/// Subsample so each listed group's positive fraction matches its target rate.
///
/// The side (positives or negatives) that binds is kept whole and the other
/// side is downsampled without replacement. Unlisted groups pass through.
pub fn resample_positive_rate(d: &Dataset, rates: &Rates, seed: u64) -> Result<Dataset> {
    let mut rng = seeds::rng_from(seed, seeds::STREAM_RESAMPLE);
    let mut keep: Vec<usize> = Vec::with_capacity(d.len());
    for (key, idx) in d.groups() {
        let Some(&rate) = rates.get(key) else {
            keep.extend_from_slice(idx);
            continue;
        };
        let label = d.schema().group_label(key);
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::Infeasible {
                group: label,
                rate,
                reason: "rate outside [0, 1]".into(),
            });
        }
        let (mut pos, mut neg): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| d.records()[i].y == 1);
        let (p, n) = (pos.len(), neg.len());
        let (take_pos, take_neg) = if rate == 0.0 {
            (0, n)
        } else if rate == 1.0 {
            (p, 0)
        } else {
            // all positives kept, negatives needed; or all negatives kept, positives needed
            let neg_needed = (p as f64 * (1.0 - rate) / rate).round() as usize;
            let pos_needed = (n as f64 * rate / (1.0 - rate)).round() as usize;
            if neg_needed <= n {
                (p, neg_needed)
            } else {
                (pos_needed.min(p), n)
            }
        };
        if take_pos + take_neg == 0 {
            return Err(Error::Infeasible {
                group: label,
                rate,
                reason: format!("group has {p} positives and {n} negatives"),
            });
        }
        let total = (take_pos + take_neg) as f64;
        if ((take_pos as f64 / total) - rate).abs() > 1.0 / total + 1e-12 {
            return Err(Error::Infeasible {
                group: label,
                rate,
                reason: format!("group has {p} positives and {n} negatives"),
            });
        }
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        keep.extend_from_slice(&pos[..take_pos]);
        keep.extend_from_slice(&neg[..take_neg]);
    }
    d.subset(&keep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePhase {
    pub rates: Rates,
    pub duration: usize,
}

/// Ordered phases of target positive rates, each lasting `duration` updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessSchedule {
    pub phases: Vec<SchedulePhase>,
}

impl UnfairnessSchedule {
    pub fn new(phases: Vec<SchedulePhase>) -> Result<Self> {
        let s = Self { phases };
        s.validate()?;
        Ok(s)
    }

    /// Same group, one rate per phase, constant duration.
    pub fn for_group(group: GroupKey, rates: &[f64], duration: usize) -> Result<Self> {
        Self::new(
            rates
                .iter()
                .map(|&r| SchedulePhase {
                    rates: [(group.clone(), r)].into_iter().collect(),
                    duration,
                })
                .collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(Error::Parameter("schedule has no phases".into()));
        }
        for (i, p) in self.phases.iter().enumerate() {
            if p.duration == 0 {
                return Err(Error::Parameter(format!("phase {i} has zero duration")));
            }
            if let Some(r) = p.rates.values().find(|r| !(0.0..=1.0).contains(*r)) {
                return Err(Error::Parameter(format!("phase {i} rate {r} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn total_updates(&self) -> usize {
        self.phases.iter().map(|p| p.duration).sum()
    }
}

/// Yields one resampled dataset per schedule phase, deterministically.
pub fn schedule_iterator<'a>(
    d: &'a Dataset,
    s: &'a UnfairnessSchedule,
    seed: u64,
) -> Result<impl Iterator<Item = Result<(Dataset, usize)>> + 'a> {
    s.validate()?;
    Ok(s.phases.iter().enumerate().map(move |(i, phase)| {
        let phase_seed = seeds::derive_seed(seed ^ seeds::STREAM_SCHEDULE, i as u64);
        resample_positive_rate(d, &phase.rates, phase_seed).map(|ds| (ds, phase.duration))
    }))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Seeded census-like data with two binary sensitive attributes whose groups
/// differ in both feature means and base rates.
///
/// Attribute `race` has levels `[Black, White]` (White with probability .88)
/// and `gender` has levels `[Female, Male]` (Male with probability .67).
/// Features are standardized on the generated rows.
pub fn synthetic_census(n: usize, seed: u64) -> Result<Dataset> {
    const D: usize = 6;
    const BETA: [f64; D] = [2.0, 1.6, 1.2, -0.8, 0.6, 0.0];
    if n == 0 {
        return Err(Error::Parameter("synthetic dataset needs at least one row".into()));
    }
    let mut rng = seeds::rng_from(seed, seeds::STREAM_SYNTHETIC);
    let normal = rand_distr::StandardNormal;
    let mut records = Vec::with_capacity(n);
    for _ in 0..n {
        let white = i64::from(rng.random_bool(0.88));
        let male = i64::from(rng.random_bool(0.67));
        let shift = 0.15 * white as f64 + 0.25 * male as f64;
        let x: Vec<f64> = (0..D)
            .map(|k| {
                let z: f64 = rng.sample(normal);
                if k < 3 {
                    z + shift
                } else {
                    z
                }
            })
            .collect();
        let logit = -3.4 + 0.4 * male as f64 + 0.2 * white as f64
            + x.iter().zip(BETA).map(|(v, b)| v * b).sum::<f64>();
        let p = 1.0 / (1.0 + (-logit).exp());
        records.push(Record {
            a: vec![white, male],
            x,
            y: u8::from(rng.random_bool(p)),
        });
    }
    for k in 0..D {
        let mean = records.iter().map(|r| r.x[k]).sum::<f64>() / n as f64;
        let var = records.iter().map(|r| (r.x[k] - mean).powi(2)).sum::<f64>() / n as f64;
        let scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        records.iter_mut().for_each(|r| r.x[k] = (r.x[k] - mean) / scale);
    }
    Dataset::from_records(
        records,
        DatasetSchema {
            feature_names: (1..=D).map(|k| format!("f{k}")).collect(),
            sensitive: vec![
                SensitiveAttr {
                    name: "race".into(),
                    levels: vec!["Black".into(), "White".into()],
                },
                SensitiveAttr {
                    name: "gender".into(),
                    levels: vec!["Female".into(), "Male".into()],
                },
            ],
            label: "y".into(),
        },
    )
}
