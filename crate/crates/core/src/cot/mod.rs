//! Continuous optimal transport through the regularized dual.
//!
//! Dual potentials are random-Fourier-feature expansions updated by
//! stochastic gradient ascent; the score model is updated by descending the
//! same Monte-Carlo objective through the chain rule.

mod config;
mod dual;
mod regularizer;
mod solver;
mod theta;

pub use config::{OtConfig, PairMode};
pub use dual::{dual_objective, dual_update, estimate_reg_w1, DualPair, DualStep, DIVERGENCE_LIMIT};
pub use regularizer::{alpha, conjugate, RegKind, Regularizer, EXP_CLIP};
pub use solver::{cot_run, CotOutcome, CotState};
pub use theta::{cot_objective, theta_direction, theta_update};
