//! Parameter step of COT: descend the sum of regularized group-to-target
//! distances through the score model, holding the duals fixed.

use std::collections::BTreeMap;

use super::config::PairMode;
use super::dual::{feature_matrix, pair_terms, potentials, DualPair};
use super::regularizer::Regularizer;
use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::model::LogisticModel;
use crate::training::{check_inputs, sign, Batches};

fn lookup<'p>(pairs: &'p BTreeMap<GroupKey, DualPair>, key: &GroupKey) -> Result<&'p DualPair> {
    pairs.get(key).ok_or_else(|| Error::UnknownGroup(key.to_string()))
}

/// Per-group pieces needed both by the objective and its gradient.
struct GroupEval {
    scores: Vec<f64>,
    lx: Vec<f64>,
    ly: Vec<f64>,
}

fn group_eval(model: &LogisticModel, pair: &DualPair, rows: &[&[f64]], target: &[f64]) -> GroupEval {
    let scores: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
    let lx = potentials(&pair.score_side.coeffs, &feature_matrix(pair.score_side.map(), &scores));
    let ly = potentials(&pair.target_side.coeffs, &feature_matrix(pair.target_side.map(), target));
    GroupEval { scores, lx, ly }
}

/// Monte-Carlo objective in θ: `Σ_a` of the batch dual objective of group
/// `a` with the current scores and fixed duals.
pub fn cot_objective(
    model: &LogisticModel,
    pairs: &BTreeMap<GroupKey, DualPair>,
    batches: &Batches<'_>,
    target: &[f64],
    reg: &Regularizer,
    mode: PairMode,
) -> Result<f64> {
    check_inputs(model, batches)?;
    let mut total = 0.0;
    for (key, rows) in batches {
        let pair = lookup(pairs, key)?;
        let g = group_eval(model, pair, rows, target);
        let terms = pair_terms(reg, &g.lx, &g.ly, &g.scores, target, mode)?;
        total += g.lx.iter().sum::<f64>() / g.lx.len() as f64 + g.ly.iter().sum::<f64>() / g.ly.len() as f64
            - terms.penalty;
    }
    Ok(total)
}

/// Raw (unnormalized) descent direction of the parameter step:
/// `Σ_a Σ_i Σ_j ((1 - α_ij) λ'_{S_a}(s_i) + α_ij sign(s_i - s̄_j)) ∇_θ s_i`,
/// restricted to `j = i` in diagonal mode.
pub fn theta_direction(
    model: &LogisticModel,
    pairs: &BTreeMap<GroupKey, DualPair>,
    batches: &Batches<'_>,
    target: &[f64],
    reg: &Regularizer,
    mode: PairMode,
) -> Result<Vec<f64>> {
    check_inputs(model, batches)?;
    if target.is_empty() {
        return Err(Error::Parameter("empty target batch".into()));
    }
    let mut grad = vec![0.0; model.dim()];
    let mut slope_buf = Vec::new();
    for (key, rows) in batches {
        let pair = lookup(pairs, key)?;
        if mode == PairMode::Diagonal && rows.len() != target.len() {
            return Err(Error::Parameter(format!(
                "diagonal pairing needs equal batch sizes, got {} and {}",
                rows.len(),
                target.len()
            )));
        }
        let d = pair.score_side.coeffs.len();
        slope_buf.resize(d, 0.0);
        let g = group_eval(model, pair, rows, target);
        for (i, row) in rows.iter().enumerate() {
            let s = g.scores[i];
            pair.score_side.map().feature_slopes_into(s, &mut slope_buf);
            let slope: f64 = slope_buf.iter().zip(&pair.score_side.coeffs).map(|(a, b)| a * b).sum();
            let mut coef = 0.0;
            let mut add = |j: usize| {
                let t = target[j];
                let a = reg.conjugate_slope_at(reg.scaled(g.lx[i] + g.ly[j], (s - t).abs()));
                coef += (1.0 - a) * slope + a * sign(s - t);
            };
            match mode {
                PairMode::Full => (0..target.len()).for_each(&mut add),
                PairMode::Diagonal => add(i),
            }
            let w = coef * s * (1.0 - s);
            grad.iter_mut().zip(row.iter()).for_each(|(gr, v)| *gr += w * v);
        }
    }
    if grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invariant("non-finite parameter gradient".into()));
    }
    Ok(grad)
}

/// One parameter step `θ ← θ - ε_θ · direction`.
pub fn theta_update(
    model: &mut LogisticModel,
    pairs: &BTreeMap<GroupKey, DualPair>,
    batches: &Batches<'_>,
    target: &[f64],
    reg: &Regularizer,
    eps_theta: f64,
    mode: PairMode,
) -> Result<()> {
    let dir = theta_direction(model, pairs, batches, target, reg, mode)?;
    model
        .theta_mut()
        .iter_mut()
        .zip(&dir)
        .for_each(|(t, g)| *t -= eps_theta * g);
    Ok(())
}
