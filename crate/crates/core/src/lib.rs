//! Post-training of logistic score models toward strong demographic parity.
//!
//! The crate moves each sensitive group's score distribution onto a common
//! target distribution by minimizing Wasserstein-1 distances, either through
//! the regularized continuous dual ([`cot`]), through exact discrete
//! couplings of mini-batches ([`dot`]), or by quantile post-processing
//! ([`dpp`]). [`harness`] wires these into reproducible experiments.

pub mod cot;
pub mod data;
pub mod dot;
pub mod dpp;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod rff;
pub mod seeds;
pub mod training;

pub use cot::{OtConfig, PairMode, RegKind, Regularizer};
pub use data::{Dataset, GroupKey, Record, UnfairnessSchedule};
pub use error::{Error, Result};
pub use metrics::EmpiricalDistribution;
pub use model::LogisticModel;
pub use rff::{DualPotential, RffMap};
