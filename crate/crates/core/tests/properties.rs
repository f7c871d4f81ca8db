//! Randomized invariants of the metrics, couplings, quantile maps, feature
//! maps, score model and data utilities.

use std::collections::BTreeMap;
use std::sync::Arc;

use fairot::cot::{alpha, conjugate, dual_update, DualPair, PairMode, Regularizer};
use fairot::data::{load_dataset_from_str, resample_positive_rate, synthetic_census, GroupKey};
use fairot::dot::optimal_coupling_1d;
use fairot::dpp::{dpp_transform, fit_dpp};
use fairot::metrics::{
    barycenter_objective, frequency_weights, sdd, spdd, w1_barycenter, wasserstein1_1d, EmpiricalDistribution,
    BARYCENTER_GRID,
};
use fairot::model::{InputLayout, LogisticModel, SensitiveInput};
use fairot::rff::{eval_potential, grad_potential_input, make_rff, DualPotential};
use proptest::prelude::*;

fn unit_sample(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..=1.0f64, 1..=max)
}

fn dist(v: &[f64]) -> EmpiricalDistribution {
    EmpiricalDistribution::new(v.to_vec()).unwrap()
}

fn group_map(parts: &[Vec<f64>]) -> BTreeMap<GroupKey, EmpiricalDistribution> {
    parts
        .iter()
        .enumerate()
        .map(|(g, v)| (GroupKey::new(vec![g as i64]), dist(v)))
        .collect()
}

proptest! {
    #[test]
    fn w1_is_a_metric(a in unit_sample(12), b in unit_sample(12), c in unit_sample(12)) {
        let (p, q, r) = (dist(&a), dist(&b), dist(&c));
        prop_assert_eq!(wasserstein1_1d(&p, &q), wasserstein1_1d(&q, &p));
        prop_assert!(wasserstein1_1d(&p, &r) <= wasserstein1_1d(&p, &q) + wasserstein1_1d(&q, &r) + 1e-12);
        prop_assert_eq!(wasserstein1_1d(&p, &p), 0.0);
        let same = p.samples() == q.samples();
        prop_assert_eq!(wasserstein1_1d(&p, &q) == 0.0, same);
    }

    #[test]
    fn coupling_is_a_sparse_plan_with_w1_cost(xs in unit_sample(16), ys in unit_sample(16)) {
        let c = optimal_coupling_1d(&xs, &ys).unwrap();
        let (n, m) = (xs.len(), ys.len());
        prop_assert!(c.len() <= n + m - 1);
        let dense = c.to_dense();
        for i in 0..n {
            let row: f64 = dense[i * m..(i + 1) * m].iter().sum();
            prop_assert!((row - 1.0 / n as f64).abs() < 1e-12);
        }
        for j in 0..m {
            let col: f64 = (0..n).map(|i| dense[i * m + j]).sum();
            prop_assert!((col - 1.0 / m as f64).abs() < 1e-12);
        }
        prop_assert!((c.cost(&xs, &ys) - wasserstein1_1d(&dist(&xs), &dist(&ys))).abs() < 1e-12);
    }

    #[test]
    fn equal_size_coupling_cost_is_w1_exactly(pairs in prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), 1..20)) {
        let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let c = optimal_coupling_1d(&xs, &ys).unwrap();
        prop_assert_eq!(c.cost(&xs, &ys), wasserstein1_1d(&dist(&xs), &dist(&ys)));
    }

    #[test]
    fn disparities_are_nonnegative_and_order_free(
        parts in prop::collection::vec(unit_sample(10), 2..4),
        rot in 0usize..10,
    ) {
        let groups = group_map(&parts);
        let pooled = EmpiricalDistribution::pooled(groups.values()).unwrap();
        let (s, sp) = (sdd(&groups, &pooled), spdd(&groups));
        prop_assert!(s >= 0.0 && sp >= 0.0);
        let rotated: Vec<Vec<f64>> = parts
            .iter()
            .map(|v| {
                let mut w = v.clone();
                let k = rot % w.len();
                w.rotate_left(k);
                w.reverse();
                w
            })
            .collect();
        let g2 = group_map(&rotated);
        let pooled2 = EmpiricalDistribution::pooled(g2.values()).unwrap();
        prop_assert_eq!(sdd(&g2, &pooled2), s);
        prop_assert_eq!(spdd(&g2), sp);
    }

    #[test]
    fn barycenter_beats_pooled_and_members(parts in prop::collection::vec(unit_sample(15), 1..4)) {
        let groups = group_map(&parts);
        let sizes = groups.iter().map(|(k, d)| (k.clone(), d.len())).collect();
        let w = frequency_weights(&sizes);
        let bary = w1_barycenter(&groups, &w, BARYCENTER_GRID).unwrap();
        let best = barycenter_objective(&bary, &groups, &w);
        let pooled = EmpiricalDistribution::pooled(groups.values()).unwrap();
        prop_assert!(best <= barycenter_objective(&pooled, &groups, &w) + 1e-9);
        for d in groups.values() {
            prop_assert!(best <= barycenter_objective(d, &groups, &w) + 1e-9);
        }
    }

    #[test]
    fn quantile_map_is_monotone(src in unit_sample(20), tgt in unit_sample(20), mut probe in prop::collection::vec(-0.1..=1.1f64, 2..30)) {
        let key = GroupKey::new(vec![0]);
        let m = fit_dpp(&BTreeMap::from([(key.clone(), dist(&src))]), &dist(&tgt)).unwrap();
        probe.sort_by(f64::total_cmp);
        let out: Vec<f64> = probe.iter().map(|&s| dpp_transform(&m, &key, s).unwrap()).collect();
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn quantile_map_pushes_its_sample_onto_the_target(src in unit_sample(40), tgt in unit_sample(40)) {
        let key = GroupKey::new(vec![0]);
        let m = fit_dpp(&BTreeMap::from([(key.clone(), dist(&src))]), &dist(&tgt)).unwrap();
        let pushed: Vec<f64> = src.iter().map(|&s| dpp_transform(&m, &key, s).unwrap()).collect();
        let bound = 2.0 / src.len().min(tgt.len()) as f64;
        prop_assert!(wasserstein1_1d(&dist(&pushed), &dist(&tgt)) <= bound + 1e-12);
    }

    #[test]
    fn potential_slope_matches_differences(seed in any::<u64>(), x in -1.0..2.0f64, sigma2 in 0.05..2.0f64) {
        let map = Arc::new(make_rff(16, sigma2, seed).unwrap());
        let coeffs: Vec<f64> = map.phases().iter().map(|p| p.sin()).collect();
        let p = DualPotential::with_coeffs(map, coeffs).unwrap();
        let h = 1e-6;
        let fd = (eval_potential(&p, x + h) - eval_potential(&p, x - h)) / (2.0 * h);
        let g = grad_potential_input(&p, x);
        prop_assert!((g - fd).abs() <= 1e-5 * g.abs().max(1.0), "analytic {g}, numeric {fd}");
    }

    #[test]
    fn score_gradient_matches_differences(theta in prop::collection::vec(-3.0..3.0f64, 3), row in prop::collection::vec(-2.0..2.0f64, 3)) {
        let layout = InputLayout {
            sensitive: SensitiveInput::Excluded,
            sensitive_levels: vec![],
            n_features: 3,
            intercept: false,
            names: vec!["a".into(), "b".into(), "c".into()],
        };
        let model = LogisticModel::new(layout.clone(), theta.clone()).unwrap();
        let s = model.score_row(&row);
        prop_assert!(s > 0.0 && s < 1.0);
        let g = model.grad_score_row(&row);
        for k in 0..3 {
            let eval = |h: f64| {
                let mut t = theta.clone();
                t[k] += h;
                LogisticModel::new(layout.clone(), t).unwrap().score_row(&row)
            };
            let fd = (eval(1e-6) - eval(-1e-6)) / 2e-6;
            prop_assert!((g[k] - fd).abs() <= 1e-5 * g[k].abs().max(1e-3));
        }
    }

    #[test]
    fn entropy_alpha_is_the_conjugate(pot in -2.0..2.0f64, cost in 0.0..1.0f64, lambda in 0.01..1.0f64) {
        let reg = Regularizer::entropy(lambda);
        let u = (pot - cost) / lambda;
        prop_assert_eq!(alpha(&reg, pot, cost), conjugate(&reg, u.min(30.0)));
    }

    #[test]
    fn antisymmetry_survives_updates(seed in any::<u64>(), xs in unit_sample(6), ys in unit_sample(6), steps in 1usize..6) {
        let mut pair = DualPair::zeros(Arc::new(make_rff(10, 0.1, seed).unwrap()));
        let reg = Regularizer::entropy(0.1);
        for _ in 0..steps {
            dual_update(&mut pair, &reg, &xs, &ys, 0.05, true, PairMode::Full).unwrap();
            prop_assert!(pair.is_antisymmetric());
        }
    }

    #[test]
    fn resampling_hits_the_rate(seed in 0u64..50, rate in 0.05..0.95f64) {
        let d = synthetic_census(600, seed).unwrap();
        let key = d.groups().keys().last().unwrap().clone();
        let out = resample_positive_rate(&d, &BTreeMap::from([(key.clone(), rate)]), seed).unwrap();
        let idx = &out.groups()[&key];
        let pos = idx.iter().filter(|&&i| out.records()[i].y == 1).count();
        prop_assert!((pos as f64 / idx.len() as f64 - rate).abs() <= 1.0 / idx.len() as f64 + 1e-12);
        let again = resample_positive_rate(&d, &BTreeMap::from([(key, rate)]), seed).unwrap();
        prop_assert_eq!(out.records(), again.records());
    }
}

#[test]
fn groups_partition_the_records() {
    for seed in 0..5 {
        let d = synthetic_census(500, seed).unwrap();
        let mut seen: Vec<usize> = d.groups().values().flatten().copied().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..d.len()).collect::<Vec<_>>());
        assert!(d.groups().values().all(|v| !v.is_empty()));
        let (train, test) = d.split(0.7, seed).unwrap();
        assert_eq!(train.len() + test.len(), d.len());
    }
}

#[test]
fn loading_is_deterministic_and_rejects_bad_rows() {
    let schema: fairot::data::Schema = toml::from_str(
        r#"
        [[columns]]
        name = "age"
        role = "feature"
        encoding = { kind = "numeric" }
        [[columns]]
        name = "sex"
        role = "sensitive"
        encoding = { kind = "categorical" }
        [[columns]]
        name = "y"
        role = "label"
        encoding = { kind = "positive", values = ["1"] }
        "#,
    )
    .unwrap();
    let text = "age,sex,y\n30,F,1\n40,M,0\n50,F,0\n";
    let a = load_dataset_from_str(text, &schema).unwrap();
    let b = load_dataset_from_str(text, &schema).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.groups().len(), 2);
    assert!(load_dataset_from_str("age,sex,y\n30,F,1\nold,M,0\n", &schema).is_err());
    assert!(load_dataset_from_str("age,y\n30,1\n", &schema).is_err());
    assert!(load_dataset_from_str("age,sex,y\n", &schema).is_err());
    let one = load_dataset_from_str("age,sex,y\n30,F,1\n", &schema).unwrap();
    assert_eq!(one.groups().len(), 1);
}

#[test]
fn zero_coefficient_potentials_are_flat_at_any_input() {
    let map = Arc::new(make_rff(32, 0.1, 5).unwrap());
    let p = DualPotential::zeros(map);
    for x in [-3.0, 0.0, 0.5, 7.0] {
        assert_eq!(eval_potential(&p, x), 0.0);
    }
}

#[test]
fn layout_encodes_one_hot_groups() {
    let d = synthetic_census(50, 1).unwrap();
    let layout = InputLayout::for_schema(d.schema(), SensitiveInput::OneHot, true);
    let r = &d.records()[0];
    let row = layout.encode(&r.a, &r.x).unwrap();
    assert_eq!(row.len(), 2 + 2 + r.x.len() + 1);
    assert_eq!(row[..4].iter().sum::<f64>(), 2.0);
    assert_eq!(*row.last().unwrap(), 1.0);
}
