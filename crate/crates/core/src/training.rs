//! Shared machinery for the alternating post-training loops: training
//! phases, with-replacement batch sampling, held-out evaluation and traces.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::metrics::{self, EmpiricalDistribution};
use crate::model::{DesignMatrix, LogisticModel};

/// A stretch of updates driven by one training set.
#[derive(Debug, Clone)]
pub struct TrainingPhase {
    pub train: DesignMatrix,
    /// Held-out data evaluated at trace points inside this phase.
    pub eval: Option<EvalSet>,
    pub updates: usize,
}

/// Held-out rows with group membership, for metric evaluation.
#[derive(Debug, Clone)]
pub struct EvalSet {
    pub design: DesignMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub err05: f64,
    pub wass1: f64,
    pub sdd: f64,
    pub spdd: f64,
}

impl EvalSet {
    pub fn new(design: DesignMatrix) -> Self {
        Self { design }
    }

    pub fn group_scores(&self, scores: &[f64]) -> Result<BTreeMap<GroupKey, EmpiricalDistribution>> {
        self.design
            .groups
            .iter()
            .map(|(k, idx)| {
                let s = idx.iter().map(|&i| scores[i]).collect();
                Ok((k.clone(), EmpiricalDistribution::new(s)?))
            })
            .collect()
    }

    /// Metrics of already computed scores (one per design row).
    pub fn metrics_of_scores(&self, scores: &[f64], target: &EmpiricalDistribution) -> Result<MetricsRow> {
        let groups = self.group_scores(scores)?;
        let pooled = EmpiricalDistribution::new(scores.to_vec())?;
        Ok(MetricsRow {
            err05: metrics::err_at_threshold(scores, &self.design.labels, 0.5)?,
            wass1: metrics::wass1_to_target(&groups, target),
            sdd: metrics::sdd(&groups, &pooled),
            spdd: metrics::spdd(&groups),
        })
    }

    pub fn evaluate(&self, model: &LogisticModel, target: &EmpiricalDistribution) -> Result<MetricsRow> {
        self.metrics_of_scores(&model.scores(&self.design), target)
    }
}

/// One trace line, recorded after `update` parameter updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub update: usize,
    pub phase: usize,
    pub metrics: Option<MetricsRow>,
    /// Last batch objective per group: the dual objective for COT, the batch
    /// coupling cost for DOT.
    pub objectives: BTreeMap<GroupKey, f64>,
}

/// Per-group batches of encoded model inputs.
pub type Batches<'a> = BTreeMap<GroupKey, Vec<&'a [f64]>>;

pub(crate) fn sample_target(rng: &mut ChaCha8Rng, target: &EmpiricalDistribution, n: usize) -> Vec<f64> {
    (0..n).map(|_| target.draw(rng)).collect()
}

pub(crate) fn sample_batches<'a>(rng: &mut ChaCha8Rng, train: &'a DesignMatrix, n: usize) -> Batches<'a> {
    train
        .groups
        .iter()
        .filter(|(_, idx)| !idx.is_empty())
        .map(|(k, idx)| {
            let rows = (0..n)
                .map(|_| train.row(idx[rng.random_range(0..idx.len())]))
                .collect();
            (k.clone(), rows)
        })
        .collect()
}

/// `sign` with `sign(0) = 0`.
pub(crate) fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub(crate) fn check_inputs(model: &LogisticModel, batches: &Batches<'_>) -> Result<()> {
    for rows in batches.values() {
        if rows.is_empty() {
            return Err(Error::Parameter("empty group batch".into()));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != model.dim()) {
            return Err(Error::Dimension {
                expected: model.dim(),
                got: r.len(),
            });
        }
    }
    Ok(())
}

/// One alternating solver, stepped by [`drive`].
pub(crate) trait Stepper {
    /// Performs update number `update` (zero based) and returns per-group
    /// batch objectives.
    fn step(
        &mut self,
        model: &mut LogisticModel,
        train: &DesignMatrix,
        target: &EmpiricalDistribution,
        rng: &mut ChaCha8Rng,
        update: usize,
    ) -> Result<BTreeMap<GroupKey, f64>>;

    fn on_phase_change(&mut self, _phase: usize) {}
}

/// Phase index holding update `u`, or `None` past the schedule end.
pub(crate) fn phase_of(phases: &[TrainingPhase], u: usize) -> Option<usize> {
    let mut end = 0;
    for (p, ph) in phases.iter().enumerate() {
        end += ph.updates;
        if u < end {
            return Some(p);
        }
    }
    None
}

pub(crate) fn total_updates(phases: &[TrainingPhase], cap: usize) -> usize {
    phases.iter().map(|p| p.updates).sum::<usize>().min(cap)
}

pub(crate) struct DriveArgs<'a> {
    pub phases: &'a [TrainingPhase],
    pub target: &'a EmpiricalDistribution,
    pub start: usize,
    pub end: usize,
    pub trace_every: usize,
}

fn trace_row(
    args: &DriveArgs<'_>,
    model: &LogisticModel,
    update: usize,
    phase: usize,
    objectives: &BTreeMap<GroupKey, f64>,
) -> Result<TraceRow> {
    let metrics = match &args.phases[phase].eval {
        Some(eval) => Some(eval.evaluate(model, args.target)?),
        None => None,
    };
    Ok(TraceRow {
        update,
        phase,
        metrics,
        objectives: objectives.clone(),
    })
}

/// Runs updates `start..end`, tracing every `trace_every` updates and at the end.
pub(crate) fn drive(
    stepper: &mut dyn Stepper,
    model: &mut LogisticModel,
    rng: &mut ChaCha8Rng,
    args: &DriveArgs<'_>,
    trace: &mut Vec<TraceRow>,
) -> Result<()> {
    if args.phases.is_empty() {
        return Err(Error::Parameter("no training phases".into()));
    }
    let mut objectives = BTreeMap::new();
    let mut current = if args.start == 0 {
        None
    } else {
        phase_of(args.phases, args.start - 1)
    };
    for u in args.start..args.end {
        let phase = phase_of(args.phases, u).expect("end is capped by schedule length");
        if current.is_some_and(|c| c != phase) {
            stepper.on_phase_change(phase);
        }
        current = Some(phase);
        if args.trace_every > 0 && u % args.trace_every == 0 {
            trace.push(trace_row(args, model, u, phase, &objectives)?);
        }
        objectives = stepper.step(model, &args.phases[phase].train, args.target, rng, u)?;
    }
    let last = args.end;
    if trace.last().is_none_or(|r| r.update != last) {
        let phase = phase_of(args.phases, last.saturating_sub(1)).unwrap_or(0);
        trace.push(trace_row(args, model, last, phase, &objectives)?);
    }
    Ok(())
}
