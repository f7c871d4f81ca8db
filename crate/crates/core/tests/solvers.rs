//! End-to-end behaviour of the feature maps and the COT/DOT loops on small
//! seeded problems: determinism, bit-exact resumption, kernel convergence,
//! the long-run trend of the fairness metric and the parameter-step
//! reference implementations.

use std::collections::BTreeMap;
use std::sync::Arc;

use fairot::cot::{cot_run, theta_direction, CotState, DualPair, OtConfig, PairMode, Regularizer};
use fairot::data::GroupKey;
use fairot::dot::{dot_direction, dot_run, group_couplings, optimal_coupling_1d, DotState};
use fairot::harness::{prepare, ExperimentConfig};
use fairot::metrics::EmpiricalDistribution;
use fairot::model::{InputLayout, LogisticModel, SensitiveInput};
use fairot::rff::{eval_features, eval_potential, implied_kernel, make_rff, DualPotential};
use fairot::training::{EvalSet, TrainingPhase};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Toy {
    start: LogisticModel,
    phases: Vec<TrainingPhase>,
    target: EmpiricalDistribution,
}

fn toy(seed: u64, rows: usize, updates: usize) -> Toy {
    let text = format!("seed = {seed}\n[dataset]\nsynthetic_rows = {rows}\n");
    let p = prepare(&ExperimentConfig::from_toml_str(&text).unwrap()).unwrap();
    Toy {
        start: p.start,
        phases: vec![TrainingPhase {
            train: p.train_design,
            eval: Some(EvalSet::new(p.test_design)),
            updates,
        }],
        target: p.target,
    }
}

/// Tuned defaults with batch 16 and the step rescaled to the same
/// normalized size.
fn small_batch_cfg(seed: u64, updates: usize) -> OtConfig {
    let base = OtConfig::default();
    OtConfig {
        batch_scores: 16,
        batch_target: 16,
        eps_theta: base.eps_theta * 16.0,
        num_updates: updates,
        seed,
        ..base
    }
}

#[test]
fn kernel_error_shrinks_with_feature_count() {
    let grid: Vec<f64> = (0..15).map(|i| i as f64 / 14.0).collect();
    let mean_error = |d: usize| -> f64 {
        let mut total = 0.0;
        for seed in 0..10 {
            let m = make_rff(d, 0.1, seed).unwrap();
            let feats: Vec<Vec<f64>> = grid.iter().map(|&x| eval_features(&m, x)).collect();
            for (i, fi) in feats.iter().enumerate() {
                for (j, fj) in feats.iter().enumerate() {
                    let approx: f64 = fi.iter().zip(fj).map(|(a, b)| a * b).sum();
                    total += (approx - implied_kernel(grid[i], grid[j], 0.1)).abs();
                }
            }
        }
        total / (10 * grid.len() * grid.len()) as f64
    };
    let (coarse, fine) = (mean_error(50), mean_error(2000));
    assert!(fine < coarse, "error at D = 2000 ({fine}) not below D = 50 ({coarse})");
}

#[test]
fn feature_maps_rebuild_bit_exactly() {
    let a = make_rff(64, 0.3, 99).unwrap();
    let b = make_rff(64, 0.3, 99).unwrap();
    assert_eq!(a, b);
    let p = DualPotential::with_coeffs(Arc::new(a), vec![0.25; 64]).unwrap();
    let q = DualPotential::with_coeffs(Arc::new(b), vec![0.25; 64]).unwrap();
    assert_eq!(eval_potential(&p, 0.37).to_bits(), eval_potential(&q, 0.37).to_bits());
}

#[test]
fn cot_and_dot_runs_repeat_bit_exactly() {
    let t = toy(4, 1500, 400);
    let cfg = small_batch_cfg(4, 400);
    let a = cot_run(t.start.clone(), &t.phases, &t.target, &cfg, 50).unwrap();
    let b = cot_run(t.start.clone(), &t.phases, &t.target, &cfg, 50).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model, b.model);
    let c = dot_run(t.start.clone(), &t.phases, &t.target, &cfg, 50).unwrap();
    let d = dot_run(t.start.clone(), &t.phases, &t.target, &cfg, 50).unwrap();
    assert_eq!(c.trace, d.trace);
    assert_eq!(c.model, d.model);
    assert_ne!(a.model, c.model);
}

#[test]
fn checkpoints_resume_bit_exactly() {
    let t = toy(6, 1500, 600);
    let cfg = small_batch_cfg(6, 600);

    let mut straight = CotState::new(t.start.clone(), &t.phases, &cfg).unwrap();
    let mut full_trace = Vec::new();
    straight.advance(&t.phases, &t.target, &cfg, 100, usize::MAX, &mut full_trace).unwrap();

    let mut first = CotState::new(t.start.clone(), &t.phases, &cfg).unwrap();
    let mut split_trace = Vec::new();
    first.advance(&t.phases, &t.target, &cfg, 100, 300, &mut split_trace).unwrap();
    let closing_row = split_trace.len() - 1;
    let mut resumed = CotState::from_checkpoint(&first.to_checkpoint().unwrap()).unwrap();
    resumed.advance(&t.phases, &t.target, &cfg, 100, usize::MAX, &mut split_trace).unwrap();
    assert_eq!(resumed.model, straight.model);
    assert_eq!(resumed.pairs, straight.pairs);
    // The resumed segment reopens at update 300 with a row that has no step
    // objectives yet; the first segment's closing row already covers it.
    let reopened = split_trace.remove(closing_row + 1);
    assert_eq!(reopened.update, 300);
    assert!(reopened.objectives.is_empty());
    assert_eq!(split_trace, full_trace);

    let mut dot_straight = DotState::new(t.start.clone(), &cfg).unwrap();
    dot_straight.advance(&t.phases, &t.target, &cfg, 100, usize::MAX, &mut Vec::new()).unwrap();
    let mut dot_first = DotState::new(t.start.clone(), &cfg).unwrap();
    dot_first.advance(&t.phases, &t.target, &cfg, 100, 250, &mut Vec::new()).unwrap();
    let mut dot_resumed = DotState::from_checkpoint(&dot_first.to_checkpoint().unwrap()).unwrap();
    dot_resumed.advance(&t.phases, &t.target, &cfg, 100, usize::MAX, &mut Vec::new()).unwrap();
    assert_eq!(dot_resumed.model, dot_straight.model);
}

#[test]
fn fairness_metric_trends_down_on_a_fixed_problem() {
    // Median Wass1 over windows of 5000 updates, non-increasing in at least
    // nine of ten seeds. Batch 16 at the unscaled default step keeps the run
    // in its descent phase over the whole horizon.
    let mut violations = Vec::new();
    for seed in 0..10 {
        let t = toy(seed, 3000, 20_000);
        let cfg = OtConfig {
            eps_theta: OtConfig::default().eps_theta,
            ..small_batch_cfg(seed, 20_000)
        };
        let out = cot_run(t.start, &t.phases, &t.target, &cfg, 500).unwrap();
        let medians: Vec<f64> = out
            .trace
            .iter()
            .filter(|r| r.update < 20_000)
            .collect::<Vec<_>>()
            .chunks(10)
            .map(|w| {
                let mut v: Vec<f64> = w.iter().filter_map(|r| r.metrics.map(|m| m.wass1)).collect();
                v.sort_by(f64::total_cmp);
                v[v.len() / 2]
            })
            .collect();
        assert_eq!(medians.len(), 4);
        if medians.windows(2).any(|w| w[1] > w[0]) {
            violations.push((seed, medians));
        }
    }
    assert!(violations.len() <= 1, "window medians rose for {violations:?}");
}

fn layout(dim: usize) -> InputLayout {
    InputLayout {
        sensitive: SensitiveInput::Excluded,
        sensitive_levels: vec![],
        n_features: dim,
        intercept: false,
        names: (0..dim).map(|k| format!("x{k}")).collect(),
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[test]
fn parameter_directions_match_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let dim = 3;
    let model = LogisticModel::new(layout(dim), vec![0.7, -0.4, 0.2]).unwrap();
    let rows: Vec<Vec<f64>> = (0..8).map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let target: Vec<f64> = (0..4).map(|_| rng.random()).collect();
    let key = GroupKey::new(vec![0]);
    let batches = BTreeMap::from([(key.clone(), rows.iter().map(Vec::as_slice).collect::<Vec<_>>())]);
    let map = Arc::new(make_rff(6, 0.2, 3).unwrap());
    let coeffs: Vec<f64> = (0..6).map(|_| rng.random_range(-0.3..0.3)).collect();
    let pair = DualPair {
        score_side: DualPotential::with_coeffs(map.clone(), coeffs.clone()).unwrap(),
        target_side: DualPotential::with_coeffs(map, coeffs.iter().map(|c| -c).collect()).unwrap(),
    };
    let reg = Regularizer::entropy(0.2);
    let pairs = BTreeMap::from([(key.clone(), pair.clone())]);

    let mut naive = vec![0.0; dim];
    let h = 1e-7;
    for row in &rows {
        let s = model.score_row(row);
        let slope = (eval_potential(&pair.score_side, s + h) - eval_potential(&pair.score_side, s - h)) / (2.0 * h);
        for &t in &target {
            let u = (eval_potential(&pair.score_side, s) + eval_potential(&pair.target_side, t) - (s - t).abs()) / 0.2;
            let a = u.exp();
            let coef = ((1.0 - a) * slope + a * sign(s - t)) * s * (1.0 - s);
            naive.iter_mut().zip(row).for_each(|(g, v)| *g += coef * v);
        }
    }
    let fast = theta_direction(&model, &pairs, &batches, &target, &reg, PairMode::Full).unwrap();
    for (a, b) in fast.iter().zip(&naive) {
        assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0), "{fast:?} vs {naive:?}");
    }

    // DOT: dense n × m loop over the coupling.
    let couplings = group_couplings(&model, &batches, &target).unwrap();
    let scores: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
    let dense = optimal_coupling_1d(&scores, &target).unwrap().to_dense();
    let mut dense_dir = vec![0.0; dim];
    for (i, row) in rows.iter().enumerate() {
        let s = scores[i];
        for (j, &t) in target.iter().enumerate() {
            let coef = dense[i * target.len() + j] * sign(s - t) * s * (1.0 - s);
            dense_dir.iter_mut().zip(row).for_each(|(g, v)| *g += coef * v);
        }
    }
    let sparse_dir = dot_direction(&model, &couplings, &batches, &target).unwrap();
    for (a, b) in sparse_dir.iter().zip(&dense_dir) {
        assert!((a - b).abs() <= 1e-14);
    }
}

#[test]
fn a_model_already_at_the_target_does_not_move_under_dot() {
    // Scores equal to the target batch: every coupled pair has zero sign.
    let model = LogisticModel::new(layout(1), vec![1.0]).unwrap();
    let rows: Vec<Vec<f64>> = vec![vec![-1.0], vec![0.0], vec![2.0]];
    let target: Vec<f64> = rows.iter().map(|r| model.score_row(r)).collect();
    let key = GroupKey::new(vec![0]);
    let batches = BTreeMap::from([(key, rows.iter().map(Vec::as_slice).collect::<Vec<_>>())]);
    let couplings = group_couplings(&model, &batches, &target).unwrap();
    let dir = dot_direction(&model, &couplings, &batches, &target).unwrap();
    assert_eq!(dir, vec![0.0]);
}
