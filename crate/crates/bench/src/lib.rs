//! Seeded inputs shared by the solver benchmarks in `benches/`.

use std::collections::BTreeMap;
use std::sync::Arc;

use fairot::cot::DualPair;
use fairot::model::{InputLayout, SensitiveInput};
use fairot::rff::make_rff;
use fairot::{GroupKey, LogisticModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` uniform scores in `[0, 1)`.
pub fn scores(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random()).collect()
}

/// A dual pair on a fresh `d`-feature map with small random coefficients.
pub fn dual_pair(rng: &mut ChaCha8Rng, d: usize) -> DualPair {
    let mut pair = DualPair::zeros(Arc::new(make_rff(d, 0.1, rng.random()).expect("valid map")));
    for c in &mut pair.score_side.coeffs {
        *c = rng.random_range(-0.05..0.05);
    }
    pair.target_side.coeffs = pair.score_side.coeffs.iter().map(|c| -c).collect();
    pair
}

/// Score model over `dim` plain features plus per-group encoded rows.
pub struct ThetaProblem {
    pub model: LogisticModel,
    pub rows: BTreeMap<GroupKey, Vec<Vec<f64>>>,
    pub pairs: BTreeMap<GroupKey, DualPair>,
    pub target: Vec<f64>,
}

pub fn theta_problem(rng: &mut ChaCha8Rng, groups: usize, batch: usize, dim: usize, features: usize) -> ThetaProblem {
    let layout = InputLayout {
        sensitive: SensitiveInput::Excluded,
        sensitive_levels: vec![],
        n_features: dim,
        intercept: false,
        names: (0..dim).map(|k| format!("x{k}")).collect(),
    };
    let theta = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let model = LogisticModel::new(layout, theta).expect("finite parameters");
    let mut rows = BTreeMap::new();
    let mut pairs = BTreeMap::new();
    for g in 0..groups {
        let key = GroupKey::new(vec![g as i64]);
        let r = (0..batch).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        rows.insert(key.clone(), r);
        pairs.insert(key, dual_pair(rng, features));
    }
    let target = scores(rng, batch);
    ThetaProblem {
        model,
        rows,
        pairs,
        target,
    }
}
