//! The alternating COT loop: per update, one target batch, one dual step per
//! group, then one parameter step.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::OtConfig;
use super::dual::{dual_update, DualPair, DIVERGENCE_LIMIT};
use super::theta::theta_update;
use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::metrics::EmpiricalDistribution;
use crate::model::{DesignMatrix, LogisticModel};
use crate::rff::{make_rff, DualPotential};
use crate::seeds;
use crate::training::{drive, sample_batches, sample_target, total_updates, DriveArgs, Stepper, TraceRow, TrainingPhase};

/// Everything needed to continue a COT run bit-exactly.
#[derive(Debug, Clone)]
pub struct CotState {
    pub model: LogisticModel,
    pub pairs: BTreeMap<GroupKey, DualPair>,
    /// RFF seed per group.
    pub map_seeds: BTreeMap<GroupKey, u64>,
    /// Updates performed so far.
    pub update: usize,
    pub rng: ChaCha8Rng,
}

#[derive(Debug, Clone)]
pub struct CotOutcome {
    pub model: LogisticModel,
    pub trace: Vec<TraceRow>,
    pub pairs: BTreeMap<GroupKey, DualPair>,
}

impl CotState {
    /// Fresh state: zero duals for every group appearing in any phase.
    pub fn new(model: LogisticModel, phases: &[TrainingPhase], cfg: &OtConfig) -> Result<Self> {
        cfg.validate()?;
        let groups: BTreeSet<GroupKey> = phases
            .iter()
            .flat_map(|p| p.train.groups.keys().cloned())
            .collect();
        let mut pairs = BTreeMap::new();
        let mut map_seeds = BTreeMap::new();
        let base = seeds::derive_seed(cfg.seed, seeds::STREAM_RFF);
        for (i, key) in groups.into_iter().enumerate() {
            let seed = seeds::derive_seed(base, i as u64);
            let map = Arc::new(make_rff(cfg.features, cfg.sigma2, seed)?);
            pairs.insert(key.clone(), DualPair::zeros(map));
            map_seeds.insert(key, seed);
        }
        Ok(Self {
            model,
            pairs,
            map_seeds,
            update: 0,
            rng: seeds::rng_from(cfg.seed, seeds::STREAM_SOLVER),
        })
    }

    /// Runs until `cfg.num_updates` (or the schedule end), appending to `trace`.
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
        let mut stepper = CotStepper {
            pairs: &mut self.pairs,
            cfg,
            clipped: 0,
        };
        let result = drive(&mut stepper, &mut self.model, &mut self.rng, &args, trace);
        if stepper.clipped > 0 {
            log::warn!("exp argument clipped {} times", stepper.clipped);
        }
        result?;
        self.update = end;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        let file = CotCheckpoint {
            kind: "cot".into(),
            update: self.update,
            model: serde_json::from_str(&self.model.to_json()?)?,
            rng: self.rng.clone(),
            pairs: self
                .pairs
                .iter()
                .map(|(k, p)| PairRecord {
                    group: k.clone(),
                    map_seed: self.map_seeds[k],
                    features: p.map().dim(),
                    sigma2: p.map().sigma2(),
                    score_coeffs: p.score_side.coeffs.clone(),
                    target_coeffs: p.target_side.coeffs.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let file: CotCheckpoint = serde_json::from_str(text)?;
        if file.kind != "cot" {
            return Err(Error::Input(format!("checkpoint kind {} is not cot", file.kind)));
        }
        let model = LogisticModel::from_json(&file.model.to_string())?;
        let mut pairs = BTreeMap::new();
        let mut map_seeds = BTreeMap::new();
        for rec in file.pairs {
            let map = Arc::new(make_rff(rec.features, rec.sigma2, rec.map_seed)?);
            let pair = DualPair {
                score_side: DualPotential::with_coeffs(map.clone(), rec.score_coeffs)?,
                target_side: DualPotential::with_coeffs(map, rec.target_coeffs)?,
            };
            map_seeds.insert(rec.group.clone(), rec.map_seed);
            pairs.insert(rec.group, pair);
        }
        Ok(Self {
            model,
            pairs,
            map_seeds,
            update: file.update,
            rng: file.rng,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct PairRecord {
    group: GroupKey,
    map_seed: u64,
    features: usize,
    sigma2: f64,
    score_coeffs: Vec<f64>,
    target_coeffs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CotCheckpoint {
    kind: String,
    update: usize,
    model: serde_json::Value,
    rng: ChaCha8Rng,
    pairs: Vec<PairRecord>,
}

struct CotStepper<'a> {
    pairs: &'a mut BTreeMap<GroupKey, DualPair>,
    cfg: &'a OtConfig,
    clipped: usize,
}

impl Stepper for CotStepper<'_> {
    fn step(
        &mut self,
        model: &mut LogisticModel,
        train: &DesignMatrix,
        target: &EmpiricalDistribution,
        rng: &mut ChaCha8Rng,
        update: usize,
    ) -> Result<BTreeMap<GroupKey, f64>> {
        let cfg = self.cfg;
        let ys = sample_target(rng, target, cfg.batch_target);
        let batches = sample_batches(rng, train, cfg.batch_scores);
        let mut objectives = BTreeMap::new();
        for (key, rows) in &batches {
            let pair = self
                .pairs
                .get_mut(key)
                .ok_or_else(|| Error::UnknownGroup(key.to_string()))?;
            let xs: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
            let step = dual_update(pair, &cfg.reg, &xs, &ys, cfg.eps_dual, cfg.antisymmetric, cfg.pair_mode)?;
            if !step.objective.is_finite() || step.objective.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    update,
                    objective: step.objective,
                });
            }
            self.clipped += step.clipped;
            objectives.insert(key.clone(), step.objective);
        }
        theta_update(model, self.pairs, &batches, &ys, &cfg.reg, cfg.eps_theta, cfg.pair_mode)?;
        if model.theta().iter().any(|t| !t.is_finite()) {
            return Err(Error::Divergence {
                update,
                objective: f64::NAN,
            });
        }
        Ok(objectives)
    }

    fn on_phase_change(&mut self, _phase: usize) {
        if self.cfg.reset_duals_on_shift {
            self.pairs.values_mut().for_each(DualPair::reset);
        }
    }
}

/// Runs the COT algorithm from `model` over `phases`.
pub fn cot_run(
    model: LogisticModel,
    phases: &[TrainingPhase],
    target: &EmpiricalDistribution,
    cfg: &OtConfig,
    trace_every: usize,
) -> Result<CotOutcome> {
    let mut state = CotState::new(model, phases, cfg)?;
    let mut trace = Vec::new();
    state.advance(phases, target, cfg, trace_every, usize::MAX, &mut trace)?;
    Ok(CotOutcome {
        model: state.model,
        trace,
        pairs: state.pairs,
    })
}
