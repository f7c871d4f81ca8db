//! Stochastic ascent on the regularized dual of one OT problem.

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::config::{OtConfig, PairMode};
use super::regularizer::Regularizer;
use crate::error::{Error, Result};
use crate::rff::{make_rff, DualPotential, RffMap};
use crate::seeds;

/// The two dual variables of one regularized OT problem, on one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPair {
    /// λ_X, evaluated on the score (or first) sample.
    pub score_side: DualPotential,
    /// λ_Y, evaluated on the target (or second) sample.
    pub target_side: DualPotential,
}

impl DualPair {
    pub fn zeros(map: Arc<RffMap>) -> Self {
        Self {
            score_side: DualPotential::zeros(map.clone()),
            target_side: DualPotential::zeros(map),
        }
    }

    pub fn map(&self) -> &Arc<RffMap> {
        self.score_side.map()
    }

    pub fn is_antisymmetric(&self) -> bool {
        self.score_side
            .coeffs
            .iter()
            .zip(&self.target_side.coeffs)
            .all(|(a, b)| *b == -*a)
    }

    pub fn reset(&mut self) {
        self.score_side.coeffs.iter_mut().for_each(|c| *c = 0.0);
        self.target_side.coeffs.iter_mut().for_each(|c| *c = 0.0);
    }
}

/// Row-major `n × D` matrix of feature vectors.
pub(crate) fn feature_matrix(map: &RffMap, xs: &[f64]) -> Vec<f64> {
    let d = map.dim();
    let mut out = vec![0.0; xs.len() * d];
    for (chunk, &x) in out.chunks_exact_mut(d).zip(xs) {
        map.features_into(x, chunk);
    }
    out
}

pub(crate) fn potentials(coeffs: &[f64], feats: &[f64]) -> Vec<f64> {
    feats
        .chunks_exact(coeffs.len())
        .map(|row| row.iter().zip(coeffs).map(|(a, b)| a * b).sum())
        .collect()
}

/// Scaled arguments `u_ij` and the per-sample mean `α` weights of a batch.
pub(crate) struct PairTerms {
    /// `mean_j α_ij` (or `α_ii`) per score sample.
    pub row_alpha: Vec<f64>,
    /// `mean_i α_ij` (or `α_jj`) per target sample.
    pub col_alpha: Vec<f64>,
    /// `λ · mean φ*(u)` over the pairs in use.
    pub penalty: f64,
    pub clipped: usize,
}

pub(crate) fn pair_terms(
    reg: &Regularizer,
    lx: &[f64],
    ly: &[f64],
    xs: &[f64],
    ys: &[f64],
    mode: PairMode,
) -> Result<PairTerms> {
    let (n, m) = (xs.len(), ys.len());
    let mut row_alpha = vec![0.0; n];
    let mut col_alpha = vec![0.0; m];
    let mut conj_sum = 0.0;
    let mut clipped = 0;
    match mode {
        PairMode::Full => {
            for i in 0..n {
                for j in 0..m {
                    let u = reg.scaled(lx[i] + ly[j], (xs[i] - ys[j]).abs());
                    clipped += usize::from(reg.clips(u));
                    let a = reg.conjugate_slope_at(u);
                    row_alpha[i] += a;
                    col_alpha[j] += a;
                    conj_sum += reg.conjugate_at(u);
                }
            }
            row_alpha.iter_mut().for_each(|a| *a /= m as f64);
            col_alpha.iter_mut().for_each(|a| *a /= n as f64);
            conj_sum /= (n * m) as f64;
        }
        PairMode::Diagonal => {
            if n != m {
                return Err(Error::Parameter(format!(
                    "diagonal pairing needs equal batch sizes, got {n} and {m}"
                )));
            }
            for i in 0..n {
                let u = reg.scaled(lx[i] + ly[i], (xs[i] - ys[i]).abs());
                clipped += usize::from(reg.clips(u));
                let a = reg.conjugate_slope_at(u);
                row_alpha[i] = a;
                col_alpha[i] = a;
                conj_sum += reg.conjugate_at(u);
            }
            conj_sum /= n as f64;
        }
    }
    if row_alpha.iter().chain(&col_alpha).any(|a| !a.is_finite()) {
        return Err(Error::Invariant("non-finite coupling weight".into()));
    }
    Ok(PairTerms {
        row_alpha,
        col_alpha,
        penalty: reg.strength * conj_sum,
        clipped,
    })
}

fn check_batches(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::Parameter("dual batches must be non-empty".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Monte-Carlo estimate of the regularized dual objective on one batch pair.
pub fn dual_objective(
    pair: &DualPair,
    reg: &Regularizer,
    xs: &[f64],
    ys: &[f64],
    mode: PairMode,
) -> Result<f64> {
    check_batches(xs, ys)?;
    let lx = potentials(&pair.score_side.coeffs, &feature_matrix(pair.score_side.map(), xs));
    let ly = potentials(&pair.target_side.coeffs, &feature_matrix(pair.target_side.map(), ys));
    let terms = pair_terms(reg, &lx, &ly, xs, ys, mode)?;
    Ok(mean(&lx) + mean(&ly) - terms.penalty)
}

/// Outcome of one dual step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualStep {
    /// Dual objective on the batch, before the step.
    pub objective: f64,
    /// Number of pairs whose `exp` argument hit the clip ceiling.
    pub clipped: usize,
}

/// One stochastic-gradient ascent step on the dual coefficients.
///
/// With `antisymmetric`, the score side moves along the gradient of the
/// objective restricted to `λ_Y = -λ_X` and the target side is set to its
/// negation.
pub fn dual_update(
    pair: &mut DualPair,
    reg: &Regularizer,
    xs: &[f64],
    ys: &[f64],
    eps_dual: f64,
    antisymmetric: bool,
    mode: PairMode,
) -> Result<DualStep> {
    check_batches(xs, ys)?;
    if antisymmetric && !pair.score_side.shares_map(&pair.target_side) {
        return Err(Error::Parameter("antisymmetric duals need a shared feature map".into()));
    }
    let d = pair.score_side.coeffs.len();
    let fx = feature_matrix(pair.score_side.map(), xs);
    let fy = feature_matrix(pair.target_side.map(), ys);
    let lx = potentials(&pair.score_side.coeffs, &fx);
    let ly = potentials(&pair.target_side.coeffs, &fy);
    let terms = pair_terms(reg, &lx, &ly, xs, ys, mode)?;
    let objective = mean(&lx) + mean(&ly) - terms.penalty;

    let mut gx = vec![0.0; d];
    for (row, a) in fx.chunks_exact(d).zip(&terms.row_alpha) {
        let w = 1.0 - a;
        gx.iter_mut().zip(row).for_each(|(g, f)| *g += w * f);
    }
    gx.iter_mut().for_each(|g| *g /= xs.len() as f64);

    let mut gy = vec![0.0; d];
    for (row, a) in fy.chunks_exact(d).zip(&terms.col_alpha) {
        let w = 1.0 - a;
        gy.iter_mut().zip(row).for_each(|(g, f)| *g += w * f);
    }
    gy.iter_mut().for_each(|g| *g /= ys.len() as f64);

    if antisymmetric {
        for ((c, a), b) in pair.score_side.coeffs.iter_mut().zip(&gx).zip(&gy) {
            *c += eps_dual * (a - b);
        }
        let negated: Vec<f64> = pair.score_side.coeffs.iter().map(|c| -c).collect();
        pair.target_side.coeffs = negated;
    } else {
        pair.score_side
            .coeffs
            .iter_mut()
            .zip(&gx)
            .for_each(|(c, g)| *c += eps_dual * g);
        pair.target_side
            .coeffs
            .iter_mut()
            .zip(&gy)
            .for_each(|(c, g)| *c += eps_dual * g);
    }
    if pair
        .score_side
        .coeffs
        .iter()
        .chain(&pair.target_side.coeffs)
        .any(|c| !c.is_finite())
    {
        return Err(Error::Invariant("non-finite dual coefficient".into()));
    }
    Ok(DualStep {
        objective,
        clipped: terms.clipped,
    })
}

/// Objective magnitude beyond which the ascent is declared divergent.
pub const DIVERGENCE_LIMIT: f64 = 1.0 / f64::EPSILON;

/// Estimates the regularized distance between two sampled distributions by
/// running `cfg.num_updates` dual steps.
///
/// The estimate is the mean batch dual objective over the second half of the
/// run. Samplers receive the solver RNG and a batch size.
pub fn estimate_reg_w1(
    mut xs_sampler: impl FnMut(&mut ChaCha8Rng, usize) -> Vec<f64>,
    mut ys_sampler: impl FnMut(&mut ChaCha8Rng, usize) -> Vec<f64>,
    cfg: &OtConfig,
) -> Result<(f64, DualPair)> {
    cfg.validate()?;
    if cfg.num_updates == 0 {
        return Err(Error::Parameter("need at least one update".into()));
    }
    let map = Arc::new(make_rff(cfg.features, cfg.sigma2, seeds::derive_seed(cfg.seed, seeds::STREAM_RFF))?);
    let mut pair = DualPair::zeros(map);
    let mut rng = seeds::rng_from(cfg.seed, seeds::STREAM_SOLVER);
    let tail_start = cfg.num_updates / 2;
    let mut tail_sum = 0.0;
    let mut clipped = 0usize;
    for k in 0..cfg.num_updates {
        let xs = xs_sampler(&mut rng, cfg.batch_scores);
        let ys = ys_sampler(&mut rng, cfg.batch_target);
        let step = dual_update(
            &mut pair,
            &cfg.reg,
            &xs,
            &ys,
            cfg.eps_dual,
            cfg.antisymmetric,
            cfg.pair_mode,
        )?;
        if !step.objective.is_finite() || step.objective.abs() > DIVERGENCE_LIMIT {
            return Err(Error::Divergence {
                update: k,
                objective: step.objective,
            });
        }
        clipped += step.clipped;
        if k >= tail_start {
            tail_sum += step.objective;
        }
    }
    if clipped > 0 {
        log::warn!("exp argument clipped {clipped} times during dual estimation");
    }
    Ok((tail_sum / (cfg.num_updates - tail_start) as f64, pair))
}
