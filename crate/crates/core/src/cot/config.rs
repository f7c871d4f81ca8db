use serde::{Deserialize, Serialize};

use super::regularizer::{RegKind, Regularizer};
use crate::error::{Error, Result};

/// Which (score, target) sample pairs enter the Monte-Carlo double sums.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PairMode {
    /// All `N_S × N_S̄` pairs.
    #[default]
    Full,
    /// Only the `i = j` pairs of independently drawn, equally sized batches.
    Diagonal,
}

/// Hyperparameters shared by the dual solver and the COT/DOT loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OtConfig {
    pub reg: Regularizer,
    /// Number of random Fourier features D.
    pub features: usize,
    /// Kernel variance σ².
    pub sigma2: f64,
    /// Dual step size ε_λ.
    pub eps_dual: f64,
    /// Parameter step size ε_θ; the `1 / (N_S N_S̄)` factor is absorbed into it.
    pub eps_theta: f64,
    /// Number of updates K.
    pub num_updates: usize,
    /// Score batch size N_S per group.
    pub batch_scores: usize,
    /// Target batch size N_S̄.
    pub batch_target: usize,
    /// Keep `λ_S̄ = -λ_S` throughout.
    pub antisymmetric: bool,
    pub pair_mode: PairMode,
    pub seed: u64,
    /// Re-zero dual coefficients whenever a schedule moves to a new phase.
    #[serde(default)]
    pub reset_duals_on_shift: bool,
}

impl Default for OtConfig {
    fn default() -> Self {
        Self {
            reg: Regularizer {
                kind: RegKind::Entropy,
                strength: 0.05,
                literal_l2_derivative: false,
            },
            features: 100,
            sigma2: 0.1,
            eps_dual: 0.1,
            eps_theta: 5e-7,
            num_updates: 100_000,
            batch_scores: 64,
            batch_target: 64,
            antisymmetric: true,
            pair_mode: PairMode::Full,
            seed: 0,
            reset_duals_on_shift: false,
        }
    }
}

impl OtConfig {
    pub fn validate(&self) -> Result<()> {
        self.reg.validate()?;
        if self.features == 0 {
            return Err(Error::Parameter("feature count must be at least 1".into()));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Parameter("kernel variance must be positive".into()));
        }
        if !(self.eps_dual > 0.0) || !(self.eps_theta >= 0.0) {
            return Err(Error::Parameter("step sizes must be positive".into()));
        }
        if self.batch_scores == 0 || self.batch_target == 0 {
            return Err(Error::Parameter("batch sizes must be at least 1".into()));
        }
        if self.pair_mode == PairMode::Diagonal && self.batch_scores != self.batch_target {
            return Err(Error::Parameter(format!(
                "diagonal pairing needs equal batch sizes, got {} and {}",
                self.batch_scores, self.batch_target
            )));
        }
        Ok(())
    }
}
