//! Discrete OT baseline: exact couplings between uniform score and target
//! batches, followed by a parameter step along the coupled cost gradient.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cot::OtConfig;
use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::metrics::{monotone_walk, EmpiricalDistribution};
use crate::model::{DesignMatrix, LogisticModel};
use crate::seeds;
use crate::training::{
    check_inputs, drive, sample_batches, sample_target, sign, total_updates, Batches, DriveArgs, Stepper, TraceRow,
    TrainingPhase,
};

/// Sparse transport plan between `n` sources and `m` targets with uniform
/// marginals. Masses are held as integer units of `1 / (n m)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    n: usize,
    m: usize,
    /// `(source index, target index, units)` in original batch order indices.
    cells: Vec<(usize, usize, u64)>,
}

impl Coupling {
    pub fn sources(&self) -> usize {
        self.n
    }

    pub fn targets(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// `(i, j, mass)` entries; masses sum to one.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let total = (self.n * self.m) as f64;
        self.cells.iter().map(move |&(i, j, u)| (i, j, u as f64 / total))
    }

    /// `<T, C>` for `C(i, j) = |xs[i] - ys[j]|`.
    pub fn cost(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let mut acc = 0.0;
        for &(i, j, u) in &self.cells {
            acc += u as f64 * (xs[i] - ys[j]).abs();
        }
        acc / (self.n as f64 * self.m as f64)
    }

    /// Dense `n × m` mass matrix, row major.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.n * self.m];
        for (i, j, w) in self.pairs() {
            dense[i * self.m + j] += w;
        }
        dense
    }
}

fn argsort(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    idx
}

/// Optimal coupling for the cost `|x - y|` between uniform measures on `xs`
/// and `ys`: sort both sides and fill the monotone plan.
pub fn optimal_coupling_1d(xs: &[f64], ys: &[f64]) -> Result<Coupling> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Parameter("coupling needs non-empty batches".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("coupling inputs must be finite".into()));
    }
    let (ox, oy) = (argsort(xs), argsort(ys));
    let mut cells = Vec::with_capacity(xs.len() + ys.len() - 1);
    monotone_walk(xs.len(), ys.len(), |i, j, units| cells.push((ox[i], oy[j], units)));
    Ok(Coupling {
        n: xs.len(),
        m: ys.len(),
        cells,
    })
}

/// Couples every group batch to the target batch.
pub fn group_couplings(
    model: &LogisticModel,
    batches: &Batches<'_>,
    target: &[f64],
) -> Result<BTreeMap<GroupKey, Coupling>> {
    batches
        .iter()
        .map(|(k, rows)| {
            let xs: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
            Ok((k.clone(), optimal_coupling_1d(&xs, target)?))
        })
        .collect()
}

/// `Σ_a Σ_(i,j) T_a(i, j) sign(s_i - s̄_j) ∇_θ s_i` over the stored cells.
pub fn dot_direction(
    model: &LogisticModel,
    couplings: &BTreeMap<GroupKey, Coupling>,
    batches: &Batches<'_>,
    target: &[f64],
) -> Result<Vec<f64>> {
    check_inputs(model, batches)?;
    let mut grad = vec![0.0; model.dim()];
    for (key, rows) in batches {
        let c = couplings
            .get(key)
            .ok_or_else(|| Error::UnknownGroup(key.to_string()))?;
        if c.n != rows.len() || c.m != target.len() {
            return Err(Error::Dimension {
                expected: c.n,
                got: rows.len(),
            });
        }
        let scores: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
        for (i, j, w) in c.pairs() {
            let s = scores[i];
            let coef = w * sign(s - target[j]) * s * (1.0 - s);
            if coef != 0.0 {
                grad.iter_mut().zip(rows[i].iter()).for_each(|(g, v)| *g += coef * v);
            }
        }
    }
    Ok(grad)
}

/// One parameter step `θ ← θ - ε_θ · direction`.
pub fn dot_theta_update(
    model: &mut LogisticModel,
    couplings: &BTreeMap<GroupKey, Coupling>,
    batches: &Batches<'_>,
    target: &[f64],
    eps_theta: f64,
) -> Result<()> {
    let dir = dot_direction(model, couplings, batches, target)?;
    model
        .theta_mut()
        .iter_mut()
        .zip(&dir)
        .for_each(|(t, g)| *t -= eps_theta * g);
    Ok(())
}

struct DotStepper<'a> {
    cfg: &'a OtConfig,
}

impl Stepper for DotStepper<'_> {
    fn step(
        &mut self,
        model: &mut LogisticModel,
        train: &DesignMatrix,
        target: &EmpiricalDistribution,
        rng: &mut ChaCha8Rng,
        update: usize,
    ) -> Result<BTreeMap<GroupKey, f64>> {
        let ys = sample_target(rng, target, self.cfg.batch_target);
        let batches = sample_batches(rng, train, self.cfg.batch_scores);
        let couplings = group_couplings(model, &batches, &ys)?;
        let mut objectives = BTreeMap::new();
        for (key, rows) in &batches {
            let xs: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
            objectives.insert(key.clone(), couplings[key].cost(&xs, &ys));
        }
        dot_theta_update(model, &couplings, &batches, &ys, self.cfg.eps_theta)?;
        if model.theta().iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence {
                update,
                objective: f64::NAN,
            });
        }
        Ok(objectives)
    }
}

/// Resumable DOT run state.
#[derive(Debug, Clone)]
pub struct DotState {
    pub model: LogisticModel,
    pub update: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct DotCheckpoint {
    kind: String,
    update: usize,
    model: serde_json::Value,
    rng: ChaCha8Rng,
}

impl DotState {
    pub fn new(model: LogisticModel, cfg: &OtConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            update: 0,
            rng: seeds::rng_from(cfg.seed, seeds::STREAM_SOLVER),
        })
    }

    pub fn advance(
        &mut self,
        phases: &[TrainingPhase],
        target: &EmpiricalDistribution,
        cfg: &OtConfig,
        trace_every: usize,
        until: usize,
        trace: &mut Vec<TraceRow>,
    ) -> Result<()> {
        cfg.validate()?;
        let end = total_updates(phases, cfg.num_updates).min(until);
        if end <= self.update {
            return Ok(());
        }
        let args = DriveArgs {
            phases,
            target,
            start: self.update,
            end,
            trace_every,
        };
        drive(&mut DotStepper { cfg }, &mut self.model, &mut self.rng, &args, trace)?;
        self.update = end;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        let file = DotCheckpoint {
            kind: "dot".into(),
            update: self.update,
            model: serde_json::from_str(&self.model.to_json()?)?,
            rng: self.rng.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let file: DotCheckpoint = serde_json::from_str(text)?;
        if file.kind != "dot" {
            return Err(Error::Input(format!("checkpoint kind {} is not dot", file.kind)));
        }
        Ok(Self {
            model: LogisticModel::from_json(&file.model.to_string())?,
            update: file.update,
            rng: file.rng,
        })
    }
}

#[derive(Debug, Clone)]
pub struct DotOutcome {
    pub model: LogisticModel,
    pub trace: Vec<TraceRow>,
}

/// Runs the DOT alternation from `model` over `phases`.
pub fn dot_run(
    model: LogisticModel,
    phases: &[TrainingPhase],
    target: &EmpiricalDistribution,
    cfg: &OtConfig,
    trace_every: usize,
) -> Result<DotOutcome> {
    let mut state = DotState::new(model, cfg)?;
    let mut trace = Vec::new();
    state.advance(phases, target, cfg, trace_every, usize::MAX, &mut trace)?;
    Ok(DotOutcome {
        model: state.model,
        trace,
    })
}
