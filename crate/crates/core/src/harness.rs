//! Experiment orchestration: configuration files, method dispatch, drift
//! runs, batch sweeps and plain-text exports.
//!
//! A run is fully determined by its resolved [`ExperimentConfig`]; the
//! resolved config is written next to every trace so that rerunning it
//! reproduces the trace byte for byte.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cot::{CotState, DualPair, OtConfig};
use crate::data::{
    self, schedule_iterator, ColumnSpec, Dataset, Delimiter, Encoding, GroupKey, Role, Schema,
    SchedulePhase, UnfairnessSchedule,
};
use crate::dot::DotState;
use crate::dpp::{dpp_transform, fit_dpp};
use crate::error::{Error, Result};
use crate::metrics::{self, EmpiricalDistribution, BARYCENTER_GRID};
use crate::model::{InputLayout, LogisticModel, LrFit, LrOptions, train_lr_design, DesignMatrix};
use crate::rff::eval_potential;
use crate::seeds;
use crate::training::{EvalSet, MetricsRow, TraceRow, TrainingPhase};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "FAIROT_OUT";
pub const DEFAULT_TRACE_EVERY: usize = 50;
/// Update budget of the desk-scale preset.
pub const DESK_UPDATES: usize = 20_000;
/// Row cap of the desk-scale preset.
pub const DESK_ROWS: usize = 10_000;
/// A phase counts as having reached its minimum at the first trace point
/// within this factor of the phase minimum.
pub const MIN_REACHED_FACTOR: f64 = 1.1;
/// Recovery after a shift: Wass1 back within this factor of the previous
/// phase minimum.
pub const RECOVERY_FACTOR: f64 = 1.5;
/// Trace points per running-median window used by the phase statistics.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Lr,
    Cot,
    Dot,
    Dpp,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Lr => "lr",
            Method::Cot => "cot",
            Method::Dot => "dot",
            Method::Dpp => "dpp",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Method::Lr),
            "cot" => Ok(Method::Cot),
            "dot" => Ok(Method::Dot),
            "dpp" => Ok(Method::Dpp),
            other => Err(Error::Config(format!("unknown method {other}"))),
        }
    }
}

/// Which distribution the groups are pushed toward.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TargetSpec {
    /// W1 barycenter of the group score distributions, frequency weighted.
    #[default]
    Barycenter,
    /// One group's score distribution, named as `attr=level,...`.
    Group { group: String },
    /// All training scores pooled.
    Pooled,
}

/// Built-in column layouts for the UCI files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `adult.data`: race restricted to Black/White, crossed with sex.
    Adult,
    /// `adult.data` with sex as the only sensitive attribute.
    AdultGender,
    /// `german.data`: age split at 30.
    German,
}

fn col(name: &str, role: Role, encoding: Encoding) -> ColumnSpec {
    ColumnSpec {
        name: name.into(),
        role,
        encoding,
    }
}

fn levels(v: &[&str]) -> Encoding {
    Encoding::Levels {
        levels: v.iter().map(|s| s.to_string()).collect(),
    }
}

impl Preset {
    pub fn schema(self) -> Schema {
        use Encoding::{Categorical, Numeric};
        use Role::{Feature, Label, Sensitive};
        match self {
            Preset::Adult | Preset::AdultGender => {
                let names = [
                    "age",
                    "workclass",
                    "fnlwgt",
                    "education",
                    "education-num",
                    "marital-status",
                    "occupation",
                    "relationship",
                    "race",
                    "sex",
                    "capital-gain",
                    "capital-loss",
                    "hours-per-week",
                    "native-country",
                    "income",
                ];
                let mut columns = vec![
                    col("age", Feature, Numeric),
                    col("workclass", Feature, Categorical),
                    col("education-num", Feature, Numeric),
                    col("marital-status", Feature, Categorical),
                    col("occupation", Feature, Categorical),
                    col("relationship", Feature, Categorical),
                    col("sex", Sensitive, levels(&["Female", "Male"])),
                    col("capital-gain", Feature, Numeric),
                    col("capital-loss", Feature, Numeric),
                    col("hours-per-week", Feature, Numeric),
                    col("native-country", Feature, Categorical),
                    col(
                        "income",
                        Label,
                        Encoding::Positive {
                            values: vec![">50K".into()],
                        },
                    ),
                ];
                if self == Preset::Adult {
                    columns.insert(6, col("race", Sensitive, levels(&["Black", "White"])));
                }
                Schema {
                    delimiter: Delimiter::Comma,
                    column_names: Some(names.iter().map(|s| s.to_string()).collect()),
                    missing: vec!["?".into(), String::new()],
                    columns,
                }
            }
            Preset::German => {
                let names = [
                    "status",
                    "duration",
                    "credit-history",
                    "purpose",
                    "amount",
                    "savings",
                    "employment",
                    "installment-rate",
                    "personal-status",
                    "other-debtors",
                    "residence-since",
                    "property",
                    "age",
                    "other-plans",
                    "housing",
                    "existing-credits",
                    "job",
                    "people-liable",
                    "telephone",
                    "foreign-worker",
                    "credit",
                ];
                let numeric = [
                    "duration",
                    "amount",
                    "installment-rate",
                    "residence-since",
                    "existing-credits",
                    "people-liable",
                ];
                let columns = names
                    .iter()
                    .map(|&n| match n {
                        "age" => col(n, Sensitive, Encoding::Threshold { at: 30.0 }),
                        "credit" => col(
                            n,
                            Label,
                            Encoding::Positive {
                                values: vec!["1".into()],
                            },
                        ),
                        _ if numeric.contains(&n) => col(n, Feature, Numeric),
                        _ => col(n, Feature, Categorical),
                    })
                    .collect();
                Schema {
                    delimiter: Delimiter::Whitespace,
                    column_names: Some(names.iter().map(|s| s.to_string()).collect()),
                    missing: vec!["?".into(), String::new()],
                    columns,
                }
            }
        }
    }
}

/// Where the records come from. Exactly one of `path` or `synthetic_rows`
/// must be set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub path: Option<PathBuf>,
    /// Column layout; required with `path` unless `preset` is given.
    pub schema: Option<Schema>,
    pub preset: Option<Preset>,
    /// Generate this many rows of seeded synthetic census-like data instead.
    pub synthetic_rows: Option<usize>,
    /// Uniform row cap applied before splitting.
    pub subsample: Option<usize>,
    pub train_fraction: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            path: None,
            schema: None,
            preset: None,
            synthetic_rows: None,
            subsample: None,
            train_fraction: 0.7,
        }
    }
}

impl DatasetSpec {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        let full = match (&self.path, self.synthetic_rows) {
            (Some(path), None) => {
                let schema = match (&self.schema, self.preset) {
                    (Some(s), _) => s.clone(),
                    (None, Some(p)) => p.schema(),
                    (None, None) => return Err(Error::Config("dataset path given without schema or preset".into())),
                };
                data::load_dataset(path, &schema)?
            }
            (None, Some(n)) => data::synthetic_census(n, seed)?,
            _ => return Err(Error::Config("set exactly one of dataset.path and dataset.synthetic_rows".into())),
        };
        match self.subsample {
            Some(n) => full.subsample(n, seed),
            None => Ok(full),
        }
    }
}

/// A single group driven through a list of positive rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    /// `attr=level,...`; naming only some attributes drives every matching group.
    pub group: String,
    pub rates: Vec<f64>,
    /// Updates per phase.
    pub duration: usize,
}

/// Held-out data used at trace points of a schedule run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Each phase's held-out data resampled with the phase's rates.
    #[default]
    Shifted,
    /// The unshifted test split throughout.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DotSection {
    /// Parameter step of DOT. When absent, `ot.eps_theta · N_S · N_S̄` so that
    /// both methods take steps of the same scale on the normalized gradient.
    pub eps_theta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub method: Method,
    /// Base seed for splitting, subsampling, resampling and the solvers.
    pub seed: u64,
    pub trace_every: usize,
    /// Output directory; nothing is written when absent.
    pub out_dir: Option<PathBuf>,
    /// Start the post-training from this model file instead of fitting LR.
    pub init_model: Option<PathBuf>,
    pub dataset: DatasetSpec,
    pub model: LrOptions,
    pub ot: OtConfig,
    pub dot: DotSection,
    pub target: TargetSpec,
    /// When present, the run follows this schedule and `ot.num_updates` is ignored.
    pub schedule: Option<ScheduleSpec>,
    pub eval: EvalMode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            method: Method::Lr,
            seed: 0,
            trace_every: DEFAULT_TRACE_EVERY,
            out_dir: None,
            init_model: None,
            dataset: DatasetSpec::default(),
            model: LrOptions::default(),
            ot: OtConfig::default(),
            dot: DotSection::default(),
            target: TargetSpec::default(),
            schedule: None,
            eval: EvalMode::default(),
        }
    }
}

/// Command-line values that replace config-file values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub method: Option<Method>,
    pub batch_size: Option<usize>,
    pub updates: Option<usize>,
    pub trace_every: Option<usize>,
    pub desk_scale: bool,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies CLI overrides; desk scale caps updates and rows without
    /// raising either.
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(out) = &o.out {
            self.out_dir = Some(out.clone());
        }
        if let Some(m) = o.method {
            self.method = m;
        }
        if let Some(b) = o.batch_size {
            self.ot.batch_scores = b;
            self.ot.batch_target = b;
        }
        if let Some(k) = o.updates {
            self.ot.num_updates = k;
        }
        if let Some(t) = o.trace_every {
            self.trace_every = t;
        }
        if o.desk_scale {
            self.ot.num_updates = self.ot.num_updates.min(DESK_UPDATES);
            self.dataset.subsample = Some(self.dataset.subsample.map_or(DESK_ROWS, |n| n.min(DESK_ROWS)));
        }
    }

    /// The config as actually run: solver seed set to the base seed and
    /// the output directory defaulted from the environment.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.ot.seed = c.seed;
        if c.out_dir.is_none() {
            if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
                c.out_dir = Some(PathBuf::from(root).join(format!("{}-{}-s{}", c.name, c.method, c.seed)));
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if matches!(self.method, Method::Cot | Method::Dot) {
            self.ot.validate()?;
        }
        if let Some(s) = &self.schedule {
            if !matches!(self.method, Method::Cot | Method::Dot) {
                return Err(Error::Config(format!("a schedule needs method cot or dot, not {}", self.method)));
            }
            if s.rates.is_empty() || s.duration == 0 {
                return Err(Error::Config("schedule needs rates and a positive duration".into()));
            }
        }
        if let Some(e) = self.dot.eps_theta {
            if !(e >= 0.0) {
                return Err(Error::Config("dot.eps_theta must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn dot_eps_theta(&self) -> f64 {
        self.dot
            .eps_theta
            .unwrap_or(self.ot.eps_theta * (self.ot.batch_scores * self.ot.batch_target) as f64)
    }
}

/// Data, baseline model and target shared by every method of one config.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub layout: InputLayout,
    pub train_design: DesignMatrix,
    pub test_design: DesignMatrix,
    pub lr: LrFit,
    /// Model the post-training starts from.
    pub start: LogisticModel,
    pub target: EmpiricalDistribution,
}

fn group_distributions(design: &DesignMatrix, scores: &[f64]) -> Result<BTreeMap<GroupKey, EmpiricalDistribution>> {
    EvalSet::new(design.clone()).group_scores(scores)
}

/// Target distribution built from training scores.
pub fn build_target(
    spec: &TargetSpec,
    train: &Dataset,
    design: &DesignMatrix,
    scores: &[f64],
) -> Result<EmpiricalDistribution> {
    let groups = group_distributions(design, scores)?;
    match spec {
        TargetSpec::Barycenter => {
            let weights = metrics::frequency_weights(&train.group_sizes());
            metrics::w1_barycenter(&groups, &weights, BARYCENTER_GRID)
        }
        TargetSpec::Group { group } => {
            let key = train.schema().parse_group(group)?;
            groups.get(&key).cloned().ok_or_else(|| Error::UnknownGroup(group.clone()))
        }
        TargetSpec::Pooled => EmpiricalDistribution::new(scores.to_vec()),
    }
}

/// Loads, splits, fits the baseline and builds the target.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let full = cfg.dataset.load(cfg.seed)?;
    let (train, test) = full.split(cfg.dataset.train_fraction, cfg.seed)?;
    let layout = InputLayout::for_schema(train.schema(), cfg.model.sensitive, cfg.model.intercept);
    let train_design = layout.design(&train)?;
    let test_design = layout.design(&test)?;
    let lr = train_lr_design(layout.clone(), &train_design, &cfg.model)?;
    if !lr.converged {
        log::warn!("logistic regression stopped after {} iterations", lr.iterations);
    }
    let start = match &cfg.init_model {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let m = LogisticModel::from_json(&text)?;
            if m.layout() != &layout {
                return Err(Error::Config(format!("{} does not match the dataset layout", path.display())));
            }
            m
        }
        None => lr.model.clone(),
    };
    let target = build_target(&cfg.target, &train, &train_design, &lr.model.scores(&train_design))?;
    Ok(Prepared {
        train,
        test,
        layout,
        train_design,
        test_design,
        lr,
        start,
        target,
    })
}

/// Recovery statistics of one schedule phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseStats {
    pub phase: usize,
    pub rate: f64,
    pub start: usize,
    pub min_wass1: f64,
    /// Updates from the phase start to the first trace point within
    /// [`MIN_REACHED_FACTOR`] of the phase minimum.
    pub updates_to_min: usize,
    /// Updates from the phase start until Wass1 is within
    /// [`RECOVERY_FACTOR`] of the previous phase minimum.
    pub updates_to_recovery: Option<usize>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub trace: Vec<TraceRow>,
    pub final_metrics: MetricsRow,
    pub lr_metrics: MetricsRow,
    pub group_labels: BTreeMap<GroupKey, String>,
    pub model: LogisticModel,
    pub pairs: Option<BTreeMap<GroupKey, DualPair>>,
    pub phases: Vec<PhaseStats>,
    /// Solver state at the end of the run.
    pub checkpoint: Option<String>,
}

fn schedule_phases(cfg: &ExperimentConfig, p: &Prepared) -> Result<(Vec<TrainingPhase>, Vec<f64>)> {
    let test_eval = EvalSet::new(p.test_design.clone());
    let Some(spec) = &cfg.schedule else {
        let phase = TrainingPhase {
            train: p.train_design.clone(),
            eval: Some(test_eval),
            updates: cfg.ot.num_updates,
        };
        return Ok((vec![phase], Vec::new()));
    };
    let keys = matching_groups(&p.train, &spec.group)?;
    let schedule = UnfairnessSchedule::new(
        spec.rates
            .iter()
            .map(|&r| SchedulePhase {
                rates: keys.iter().map(|k| (k.clone(), r)).collect(),
                duration: spec.duration,
            })
            .collect(),
    )?;
    let train_sets: Vec<_> = schedule_iterator(&p.train, &schedule, cfg.seed)?.collect::<Result<_>>()?;
    let eval_sets: Vec<Option<EvalSet>> = match cfg.eval {
        EvalMode::Fixed => vec![Some(test_eval); train_sets.len()],
        EvalMode::Shifted => schedule_iterator(&p.test, &schedule, seeds::derive_seed(cfg.seed, 1))?
            .map(|r| Ok(Some(EvalSet::new(p.layout.design(&r?.0)?))))
            .collect::<Result<_>>()?,
    };
    let phases = train_sets
        .into_iter()
        .zip(eval_sets)
        .map(|((ds, updates), eval)| {
            Ok(TrainingPhase {
                train: p.layout.design(&ds)?,
                eval,
                updates,
            })
        })
        .collect::<Result<_>>()?;
    Ok((phases, spec.rates.clone()))
}

/// Groups whose label contains every `attr=level` pair of `text`; a pair
/// list naming only some attributes selects several groups.
pub fn matching_groups(d: &Dataset, text: &str) -> Result<Vec<GroupKey>> {
    let schema = d.schema();
    let mut wanted: Vec<(usize, i64)> = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (name, level) = part
            .split_once('=')
            .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
        let attr = schema
            .sensitive
            .iter()
            .position(|a| a.name == name.trim())
            .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
        let code = schema.sensitive[attr]
            .levels
            .iter()
            .position(|l| l == level.trim())
            .ok_or_else(|| Error::UnknownGroup(text.to_string()))?;
        wanted.push((attr, code as i64));
    }
    let keys: Vec<GroupKey> = d
        .groups()
        .keys()
        .filter(|k| wanted.iter().all(|&(a, c)| k.values()[a] == c))
        .cloned()
        .collect();
    if wanted.is_empty() || keys.is_empty() {
        return Err(Error::UnknownGroup(text.to_string()));
    }
    Ok(keys)
}

/// Centered running median over [`SMOOTHING_WINDOW`] points, truncated at
/// the ends.
fn smooth(rows: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let h = SMOOTHING_WINDOW / 2;
    (0..rows.len())
        .map(|i| {
            let mut w: Vec<f64> = rows[i.saturating_sub(h)..(i + h + 1).min(rows.len())]
                .iter()
                .map(|r| r.1)
                .collect();
            w.sort_by(f64::total_cmp);
            (rows[i].0, w[(w.len() - 1) / 2])
        })
        .collect()
}

/// Per-phase minimum and recovery statistics of a schedule trace, computed
/// on the running median of the Wass1 trace.
pub fn phase_stats(trace: &[TraceRow], rates: &[f64], duration: usize) -> Vec<PhaseStats> {
    let mut out: Vec<PhaseStats> = Vec::new();
    for (p, &rate) in rates.iter().enumerate() {
        let start = p * duration;
        let raw: Vec<(usize, f64)> = trace
            .iter()
            .filter(|r| r.update >= start && r.update < start + duration)
            .filter_map(|r| r.metrics.map(|m| (r.update - start, m.wass1)))
            .collect();
        let rows = smooth(&raw);
        let Some(min) = rows.iter().map(|r| r.1).min_by(f64::total_cmp) else {
            continue;
        };
        let updates_to_min = rows
            .iter()
            .find(|r| r.1 <= MIN_REACHED_FACTOR * min)
            .map_or(0, |r| r.0);
        let updates_to_recovery = out
            .last()
            .and_then(|prev| rows.iter().find(|r| r.1 <= RECOVERY_FACTOR * prev.min_wass1).map(|r| r.0));
        out.push(PhaseStats {
            phase: p,
            rate,
            start,
            min_wass1: min,
            updates_to_min,
            updates_to_recovery,
        });
    }
    out
}

/// Trains, post-trains with the configured method, evaluates on the test
/// split and, when an output directory is set, persists everything.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    let cfg = cfg.resolved()?;
    let context = format!("experiment {} ({})", cfg.name, cfg.method);
    let report = execute(&cfg).map_err(|e| e.context(context.clone()))?;
    if let Some(dir) = &cfg.out_dir {
        persist(dir, &report).map_err(|e| e.context(context))?;
    }
    Ok(report)
}

fn execute(cfg: &ExperimentConfig) -> Result<RunReport> {
    let p = prepare(cfg)?;
    let test_eval = EvalSet::new(p.test_design.clone());
    let lr_metrics = test_eval.evaluate(&p.lr.model, &p.target)?;
    let group_labels = p
        .train
        .groups()
        .keys()
        .map(|k| (k.clone(), p.train.schema().group_label(k)))
        .collect();
    let mut report = RunReport {
        config: cfg.clone(),
        trace: Vec::new(),
        final_metrics: lr_metrics,
        lr_metrics,
        group_labels,
        model: p.start.clone(),
        pairs: None,
        phases: Vec::new(),
        checkpoint: None,
    };
    match cfg.method {
        Method::Lr => {
            report.final_metrics = test_eval.evaluate(&p.start, &p.target)?;
            report.trace.push(single_row(report.final_metrics));
        }
        Method::Dpp => {
            let train_scores = p.start.scores(&p.train_design);
            let map = fit_dpp(&group_distributions(&p.train_design, &train_scores)?, &p.target)?;
            let raw = p.start.scores(&p.test_design);
            let mut moved = vec![0.0; raw.len()];
            for (key, idx) in &p.test_design.groups {
                for &i in idx {
                    moved[i] = dpp_transform(&map, key, raw[i])?;
                }
            }
            report.final_metrics = test_eval.metrics_of_scores(&moved, &p.target)?;
            report.trace.push(single_row(report.final_metrics));
        }
        Method::Cot | Method::Dot => {
            let (phases, rates) = schedule_phases(cfg, &p)?;
            let mut ot = cfg.ot.clone();
            if cfg.schedule.is_some() {
                ot.num_updates = usize::MAX;
            }
            if cfg.method == Method::Cot {
                let mut state = CotState::new(p.start.clone(), &phases, &ot)?;
                state.advance(&phases, &p.target, &ot, cfg.trace_every, usize::MAX, &mut report.trace)?;
                report.checkpoint = Some(state.to_checkpoint()?);
                report.model = state.model;
                report.pairs = Some(state.pairs);
            } else {
                ot.eps_theta = cfg.dot_eps_theta();
                let mut state = DotState::new(p.start.clone(), &ot)?;
                state.advance(&phases, &p.target, &ot, cfg.trace_every, usize::MAX, &mut report.trace)?;
                report.checkpoint = Some(state.to_checkpoint()?);
                report.model = state.model;
            }
            let last = phases.last().and_then(|ph| ph.eval.as_ref()).unwrap_or(&test_eval);
            report.final_metrics = last.evaluate(&report.model, &p.target)?;
            if let Some(s) = &cfg.schedule {
                report.phases = phase_stats(&report.trace, &rates, s.duration);
            }
        }
    }
    Ok(report)
}

fn single_row(m: MetricsRow) -> TraceRow {
    TraceRow {
        update: 0,
        phase: 0,
        metrics: Some(m),
        objectives: BTreeMap::new(),
    }
}

/// Like [`run_experiment`] but requires a schedule.
pub fn run_drift(cfg: &ExperimentConfig) -> Result<RunReport> {
    if cfg.schedule.is_none() {
        return Err(Error::Config("drift run needs a [schedule] section".into()));
    }
    run_experiment(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub batch_size: usize,
    pub seed: u64,
    pub err05: f64,
    pub wass1: f64,
}

/// Final Wass1 and Err-.5 for every (method, batch size) pair.
///
/// The COT step is rescaled so `eps_theta · N · N̄` stays at the configured
/// value: its direction is an unnormalised sum over `N · N̄` pairs, so a fixed
/// step would shrink with the batch. The DOT direction is mass weighted and
/// keeps its step.
pub fn run_batch_sweep(cfg: &ExperimentConfig, methods: &[Method], sizes: &[usize]) -> Result<Vec<SweepRow>> {
    let base_pairs = (cfg.ot.batch_scores * cfg.ot.batch_target) as f64;
    let mut rows = Vec::new();
    for &method in methods {
        for &b in sizes {
            let mut c = cfg.clone();
            c.method = method;
            let scale = base_pairs / (b * b) as f64;
            c.dot.eps_theta = Some(cfg.dot_eps_theta());
            c.ot.eps_theta = cfg.ot.eps_theta * scale;
            c.ot.batch_scores = b;
            c.ot.batch_target = b;
            c.out_dir = None;
            c.name = format!("{}-b{b}", cfg.name);
            let r = run_experiment(&c)?;
            rows.push(SweepRow {
                method,
                batch_size: b,
                seed: cfg.seed,
                err05: r.final_metrics.err05,
                wass1: r.final_metrics.wass1,
            });
        }
    }
    if let Some(dir) = &cfg.out_dir {
        create_dir(dir)?;
        write_csv(&dir.join("sweep.csv"), &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualSnapshotRow {
    pub group: String,
    pub x: f64,
    pub score_potential: f64,
    pub target_potential: f64,
}

/// Potentials of every pair evaluated on `grid`.
pub fn export_dual_snapshot(
    pairs: &BTreeMap<GroupKey, DualPair>,
    labels: &BTreeMap<GroupKey, String>,
    grid: &[f64],
) -> Vec<DualSnapshotRow> {
    let mut rows = Vec::with_capacity(pairs.len() * grid.len());
    for (key, pair) in pairs {
        let group = labels.get(key).cloned().unwrap_or_else(|| key.to_string());
        for &x in grid {
            rows.push(DualSnapshotRow {
                group: group.clone(),
                x,
                score_potential: eval_potential(&pair.score_side, x),
                target_potential: eval_potential(&pair.target_side, x),
            });
        }
    }
    rows
}

/// `n + 1` evenly spaced points covering `[0, 1]`.
pub fn unit_grid(n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n).map(|i| i as f64 / n as f64).collect()
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Machine-readable run summary written as `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub method: Method,
    pub seed: u64,
    pub solver_seed: u64,
    pub preprocessing: String,
    pub groups: Vec<String>,
    pub lr: MetricsRow,
    #[serde(rename = "final")]
    pub final_metrics: MetricsRow,
    pub phases: Vec<PhaseStats>,
    pub config: ExperimentConfig,
}

const PREPROCESSING: &str = "numeric features standardized on the loaded rows; categorical features one-hot; \
sensitive attributes one-hot in the model input unless configured otherwise; rows with missing cells dropped";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trace as CSV: update, phase, the four metrics, then one objective column
/// per group.
pub fn trace_csv(trace: &[TraceRow], labels: &BTreeMap<GroupKey, String>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["update".to_string(), "phase".into(), "wass1".into(), "err05".into(), "sdd".into(), "spdd".into()];
    header.extend(labels.values().map(|l| format!("objective[{l}]")));
    w.write_record(&header)?;
    let num = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in trace {
        let m = r.metrics;
        let mut rec = vec![
            r.update.to_string(),
            r.phase.to_string(),
            num(m.map(|m| m.wass1)),
            num(m.map(|m| m.err05)),
            num(m.map(|m| m.sdd)),
            num(m.map(|m| m.spdd)),
        ];
        rec.extend(labels.keys().map(|k| num(r.objectives.get(k).copied())));
        w.write_record(&rec)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

fn persist(dir: &Path, r: &RunReport) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("trace.csv"), &trace_csv(&r.trace, &r.group_labels)?)?;
    write_text(&dir.join("config.toml"), &r.config.to_toml()?)?;
    write_text(&dir.join("model.json"), &r.model.to_json()?)?;
    if let Some(cp) = &r.checkpoint {
        write_text(&dir.join("checkpoint.json"), cp)?;
    }
    if let Some(pairs) = &r.pairs {
        write_csv(&dir.join("duals.csv"), &export_dual_snapshot(pairs, &r.group_labels, &unit_grid(100)))?;
    }
    let manifest = Manifest {
        name: r.config.name.clone(),
        method: r.config.method,
        seed: r.config.seed,
        solver_seed: r.config.ot.seed,
        preprocessing: PREPROCESSING.into(),
        groups: r.group_labels.values().cloned().collect(),
        lr: r.lr_metrics,
        final_metrics: r.final_metrics,
        phases: r.phases.clone(),
        config: r.config.clone(),
    };
    write_text(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

pub fn write_dual_snapshot(path: &Path, rows: &[DualSnapshotRow]) -> Result<()> {
    write_csv(path, rows)
}

// ---------------------------------------------------------------------------
// Tables
// ---------------------------------------------------------------------------

/// Mean and sample standard deviation of the final metrics of runs sharing
/// a name and method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub name: String,
    pub method: Method,
    pub runs: usize,
    pub err05: f64,
    pub err05_sd: f64,
    pub wass1: f64,
    pub wass1_sd: f64,
    pub sdd: f64,
    pub sdd_sd: f64,
    pub spdd: f64,
    pub spdd_sd: f64,
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Groups manifests by (name, method) and averages their final metrics.
/// Names carrying a `-s<seed>` suffix are grouped without it.
pub fn aggregate(manifests: &[Manifest]) -> Vec<TableRow> {
    let mut buckets: BTreeMap<(String, String), (Method, Vec<MetricsRow>)> = BTreeMap::new();
    for m in manifests {
        buckets
            .entry((m.name.clone(), m.method.to_string()))
            .or_insert_with(|| (m.method, Vec::new()))
            .1
            .push(m.final_metrics);
    }
    buckets
        .into_iter()
        .map(|((name, _), (method, rows))| {
            let pick = |f: fn(&MetricsRow) -> f64| mean_sd(&rows.iter().map(f).collect::<Vec<_>>());
            let (err05, err05_sd) = pick(|m| m.err05);
            let (wass1, wass1_sd) = pick(|m| m.wass1);
            let (sdd, sdd_sd) = pick(|m| m.sdd);
            let (spdd, spdd_sd) = pick(|m| m.spdd);
            TableRow {
                name,
                method,
                runs: rows.len(),
                err05,
                err05_sd,
                wass1,
                wass1_sd,
                sdd,
                sdd_sd,
                spdd,
                spdd_sd,
            }
        })
        .collect()
}

pub fn table_csv(rows: &[TableRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Invariant(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

/// Fixed-width text rendering with three decimals.
pub fn format_table(rows: &[TableRow]) -> String {
    let mut out = format!(
        "{:<20} {:<6} {:>4} {:>8} {:>8} {:>8} {:>8}\n",
        "name", "method", "runs", "Err-.5", "Wass1", "SDD", "SPDD"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<20} {:<6} {:>4} {:>8.3} {:>8.3} {:>8.3} {:>8.3}\n",
            r.name, r.method, r.runs, r.err05, r.wass1, r.sdd, r.spdd
        ));
    }
    out
}
