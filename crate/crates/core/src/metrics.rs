//! Exact one-dimensional evaluation machinery.
//!
//! Everything here works on empirical distributions with uniform weights,
//! so Wasserstein-1, the disparity integrals and the barycenter are computed
//! in closed form from sorted samples; nothing is estimated.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::GroupKey;
use crate::error::{Error, Result};

/// Default number of quantile levels used to represent a barycenter.
pub const BARYCENTER_GRID: usize = 1000;

/// Largest least common multiple of the group sizes for which the level
/// count is refined to make the barycenter an exact minimizer.
pub const BARYCENTER_EXACT_LEVELS: usize = 100_000;

fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// `grid` rounded up to a multiple of every group size when that multiple
/// stays small; every group quantile is then constant on each level cell.
fn barycenter_levels(groups: &BTreeMap<GroupKey, EmpiricalDistribution>, grid: usize) -> usize {
    let mut l = 1usize;
    for d in groups.values() {
        l = l / gcd(l, d.len()) * d.len();
        if l > BARYCENTER_EXACT_LEVELS {
            return grid;
        }
    }
    grid.div_ceil(l) * l
}

/// Sorted sample of scores in `[0, 1]`, each sample carrying weight `1/n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Parameter("empirical distribution needs at least one sample".into()));
        }
        if let Some(bad) = samples.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Parameter(format!("sample {bad} outside [0, 1]")));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Right-continuous CDF: fraction of samples `<= x`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.samples.partition_point(|&v| v <= x) as f64 / self.samples.len() as f64
    }

    /// Fraction of samples strictly above `tau`.
    pub fn survival(&self, tau: f64) -> f64 {
        1.0 - self.cdf(tau)
    }

    /// Left-continuous generalized inverse of the CDF: the smallest sample
    /// `x_(k)` with `k / n >= u`.
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.samples.len();
        let k = ((u * n as f64).ceil() as usize).clamp(1, n);
        self.samples[k - 1]
    }

    pub fn mean(&self) -> f64 {
        self.samples.iter().sum::<f64>() / self.samples.len() as f64
    }

    /// Draw one sample uniformly (with replacement).
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.samples[rng.random_range(0..self.samples.len())]
    }

    /// Concatenate several distributions into their empirical pool.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a EmpiricalDistribution>) -> Result<Self> {
        let all: Vec<f64> = parts.into_iter().flat_map(|d| d.samples.iter().copied()).collect();
        Self::new(all)
    }
}

/// Walks the monotone (north-west corner) transport plan between two sorted
/// uniform samples of sizes `n` and `m`.
///
/// Masses are reported in integer units of `1 / (n * m)`: every source point
/// carries `m` units and every target point `n`. Each call to `visit`
/// receives a sorted source position, a sorted target position and the
/// number of units moved between them. At most `n + m - 1` cells are visited.
pub(crate) fn monotone_walk(n: usize, m: usize, mut visit: impl FnMut(usize, usize, u64)) {
    let (mut i, mut j) = (0usize, 0usize);
    let (mut left_i, mut left_j) = (m as u64, n as u64);
    while i < n && j < m {
        let moved = left_i.min(left_j);
        visit(i, j, moved);
        left_i -= moved;
        left_j -= moved;
        if left_i == 0 {
            i += 1;
            left_i = m as u64;
        }
        if left_j == 0 {
            j += 1;
            left_j = n as u64;
        }
    }
}

/// Sum of `units * |x_i - y_j|` along the monotone plan, normalised by the
/// total unit count. Shared by [`wasserstein1_1d`] and the discrete coupling
/// cost so both report bit-identical values.
pub(crate) fn monotone_cost(xs_sorted: &[f64], ys_sorted: &[f64]) -> f64 {
    let (n, m) = (xs_sorted.len(), ys_sorted.len());
    let mut acc = 0.0;
    monotone_walk(n, m, |i, j, units| {
        acc += units as f64 * (xs_sorted[i] - ys_sorted[j]).abs();
    });
    acc / (n as f64 * m as f64)
}

/// Exact Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein1_1d(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    monotone_cost(&p.samples, &q.samples)
}

/// Classification error when predicting class 1 iff `score > tau`.
pub fn err_at_threshold(scores: &[f64], labels: &[u8], tau: f64) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::Parameter("no scores to evaluate".into()));
    }
    let wrong = scores
        .iter()
        .zip(labels)
        .filter(|(&s, &y)| u8::from(s > tau) != y)
        .count();
    Ok(wrong as f64 / scores.len() as f64)
}

/// `∫_0^1 |P(p > τ) - P(q > τ)| dτ`, integrating the piecewise-constant
/// survival functions exactly between merged breakpoints.
pub fn survival_gap(p: &EmpiricalDistribution, q: &EmpiricalDistribution) -> f64 {
    survival_gap_with(p, |tau| q.survival(tau), q.samples())
}

fn survival_gap_with(
    p: &EmpiricalDistribution,
    other_survival: impl Fn(f64) -> f64,
    other_points: &[f64],
) -> f64 {
    let mut breaks: Vec<f64> = Vec::with_capacity(p.len() + other_points.len() + 2);
    breaks.push(0.0);
    breaks.push(1.0);
    breaks.extend(p.samples().iter().copied());
    breaks.extend(other_points.iter().copied());
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let mut total = 0.0;
    for w in breaks.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi <= lo {
            continue;
        }
        // survival functions are constant on (lo, hi)
        total += (hi - lo) * (p.survival(lo) - other_survival(lo)).abs();
    }
    total
}

/// Strong demographic disparity: `Σ_a ∫ |P(S_a > τ) - P(S > τ)| dτ`.
pub fn sdd(
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
    pooled: &EmpiricalDistribution,
) -> f64 {
    groups.values().map(|g| survival_gap(g, pooled)).sum()
}

/// Variant of [`sdd`] where the pooled survival function is the equal-weight
/// mixture of the group survival functions rather than the empirical pool.
pub fn sdd_equal_weights(groups: &BTreeMap<GroupKey, EmpiricalDistribution>) -> f64 {
    let k = groups.len() as f64;
    let points: Vec<f64> = groups.values().flat_map(|g| g.samples().iter().copied()).collect();
    let mix = |tau: f64| groups.values().map(|g| g.survival(tau)).sum::<f64>() / k;
    groups
        .values()
        .map(|g| survival_gap_with(g, mix, &points))
        .sum()
}

/// Strong pairwise demographic disparity, `(1/2) Σ_{a, ā}` over ordered
/// pairs, i.e. the sum over unordered pairs.
pub fn spdd(groups: &BTreeMap<GroupKey, EmpiricalDistribution>) -> f64 {
    spdd_pairs(groups).iter().map(|(_, _, v)| v).sum()
}

/// Per-pair terms of [`spdd`] over unordered pairs in key order.
pub fn spdd_pairs(
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
) -> Vec<(GroupKey, GroupKey, f64)> {
    let entries: Vec<_> = groups.iter().collect();
    let mut out = Vec::new();
    for (i, (ka, da)) in entries.iter().enumerate() {
        for (kb, db) in entries.iter().skip(i + 1) {
            out.push(((*ka).clone(), (*kb).clone(), survival_gap(da, db)));
        }
    }
    out
}

/// Wass1 as reported in traces and tables: `Σ_a W1(p_{S_a}, target)`.
pub fn wass1_to_target(
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
    target: &EmpiricalDistribution,
) -> f64 {
    groups.values().map(|g| wasserstein1_1d(g, target)).sum()
}

/// Weighted Wasserstein-1 barycenter on a grid of at least `grid` quantile
/// levels.
///
/// At each level `u = (l + 1/2) / grid` the barycenter quantile is the
/// weighted median of the group quantiles; an exact half split resolves to
/// the smaller value. When the group sizes have a least common multiple of
/// at most [`BARYCENTER_EXACT_LEVELS`], the level count is raised to a
/// multiple of it and the result minimizes the weighted W1 objective exactly;
/// otherwise it does so up to the `1 / grid` discretization.
pub fn w1_barycenter(
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
    weights: &BTreeMap<GroupKey, f64>,
    grid: usize,
) -> Result<EmpiricalDistribution> {
    if groups.is_empty() {
        return Err(Error::Parameter("barycenter needs at least one group".into()));
    }
    if grid == 0 {
        return Err(Error::Parameter("barycenter grid must be positive".into()));
    }
    if weights.len() != groups.len() || groups.keys().any(|k| !weights.contains_key(k)) {
        return Err(Error::Parameter("barycenter weights must cover exactly the groups".into()));
    }
    let total: f64 = weights.values().sum();
    if (total - 1.0).abs() > 1e-9 || weights.values().any(|w| *w < 0.0) {
        return Err(Error::Parameter(format!(
            "barycenter weights must be non-negative and sum to 1 (sum {total})"
        )));
    }

    let members: Vec<(&EmpiricalDistribution, f64)> =
        groups.iter().map(|(k, d)| (d, weights[k])).collect();
    let grid = barycenter_levels(groups, grid);
    let mut column: Vec<(f64, f64)> = Vec::with_capacity(members.len());
    let mut out = Vec::with_capacity(grid);
    for l in 0..grid {
        let u = (l as f64 + 0.5) / grid as f64;
        column.clear();
        column.extend(members.iter().map(|(d, w)| (d.quantile(u), *w)));
        // stable: equal values keep group order
        column.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut cum = 0.0;
        let mut pick = column[column.len() - 1].0;
        for &(v, w) in &column {
            cum += w;
            if cum >= 0.5 - 1e-12 {
                pick = v;
                break;
            }
        }
        out.push(pick);
    }
    EmpiricalDistribution::new(out)
}

/// Empirical group frequencies `p(A = a)` from group sizes.
pub fn frequency_weights(sizes: &BTreeMap<GroupKey, usize>) -> BTreeMap<GroupKey, f64> {
    let total: usize = sizes.values().sum();
    sizes
        .iter()
        .map(|(k, &n)| (k.clone(), n as f64 / total as f64))
        .collect()
}

/// Weighted sum of Wasserstein-1 distances, the barycenter objective.
pub fn barycenter_objective(
    candidate: &EmpiricalDistribution,
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
    weights: &BTreeMap<GroupKey, f64>,
) -> f64 {
    groups
        .iter()
        .map(|(k, d)| weights[k] * wasserstein1_1d(candidate, d))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    fn key(v: i64) -> GroupKey {
        GroupKey::new(vec![v])
    }

    #[test]
    fn w1_basic_values() {
        assert_eq!(wasserstein1_1d(&dist(&[0.3, 0.1]), &dist(&[0.1, 0.3])), 0.0);
        assert_eq!(wasserstein1_1d(&dist(&[0.0]), &dist(&[1.0])), 1.0);
        assert_abs_diff_eq!(
            wasserstein1_1d(&dist(&[0.0, 1.0]), &dist(&[0.5, 0.5])),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn w1_equal_sizes_is_mean_abs_of_order_statistics() {
        let p = dist(&[0.9, 0.1, 0.4]);
        let q = dist(&[0.2, 0.25, 0.8]);
        let direct = ((0.1f64 - 0.2).abs() + (0.4f64 - 0.25).abs() + (0.9f64 - 0.8).abs()) / 3.0;
        assert_abs_diff_eq!(wasserstein1_1d(&p, &q), direct, epsilon = 1e-15);
    }

    #[test]
    fn monotone_walk_respects_sparsity() {
        let mut cells = 0;
        monotone_walk(7, 4, |_, _, _| cells += 1);
        assert!(cells <= 7 + 4 - 1);
    }

    #[test]
    fn rejects_out_of_range_and_empty() {
        assert!(EmpiricalDistribution::new(vec![]).is_err());
        assert!(EmpiricalDistribution::new(vec![1.5]).is_err());
        assert!(EmpiricalDistribution::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn cdf_and_quantile_conventions() {
        let d = dist(&[0.2, 0.4]);
        assert_eq!(d.cdf(0.2), 0.5);
        assert_eq!(d.cdf(0.1), 0.0);
        assert_eq!(d.quantile(0.5), 0.2);
        assert_eq!(d.quantile(0.51), 0.4);
        assert_eq!(d.quantile(0.0), 0.2);
    }

    #[test]
    fn error_rate_ties_predict_zero() {
        assert_eq!(err_at_threshold(&[0.9, 0.9], &[1, 1], 0.5).unwrap(), 0.0);
        assert_eq!(err_at_threshold(&[0.5, 0.5], &[1, 1], 0.5).unwrap(), 1.0);
        assert!(err_at_threshold(&[0.5], &[1, 0], 0.5).is_err());
    }

    #[test]
    fn sdd_and_spdd_point_masses() {
        let mut g = BTreeMap::new();
        g.insert(key(0), dist(&[0.0]));
        assert_abs_diff_eq!(sdd(&g, &dist(&[1.0])), 1.0, epsilon = 1e-15);
        assert_eq!(sdd(&g, &dist(&[0.0])), 0.0);

        g.insert(key(1), dist(&[1.0]));
        assert_abs_diff_eq!(spdd(&g), 1.0, epsilon = 1e-15);
        let mut same = BTreeMap::new();
        same.insert(key(0), dist(&[0.3, 0.6]));
        same.insert(key(1), dist(&[0.6, 0.3]));
        assert_eq!(spdd(&same), 0.0);
    }

    #[test]
    fn equal_weight_pool_matches_empirical_pool_for_equal_sizes() {
        let mut g = BTreeMap::new();
        g.insert(key(0), dist(&[0.1, 0.5]));
        g.insert(key(1), dist(&[0.2, 0.9]));
        let pooled = EmpiricalDistribution::pooled(g.values()).unwrap();
        assert_abs_diff_eq!(sdd(&g, &pooled), sdd_equal_weights(&g), epsilon = 1e-14);
    }

    #[test]
    fn barycenter_of_point_masses_is_median() {
        let mut g = BTreeMap::new();
        g.insert(key(0), dist(&[0.0]));
        g.insert(key(1), dist(&[0.5]));
        g.insert(key(2), dist(&[1.0]));
        let w: BTreeMap<_, _> = g.keys().map(|k| (k.clone(), 1.0 / 3.0)).collect();
        let b = w1_barycenter(&g, &w, 10).unwrap();
        assert!(b.samples().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn barycenter_single_group_and_tie_rule() {
        let mut g = BTreeMap::new();
        g.insert(key(0), dist(&[0.1, 0.3, 0.7, 0.9]));
        let w: BTreeMap<_, _> = g.keys().map(|k| (k.clone(), 1.0)).collect();
        let b = w1_barycenter(&g, &w, 8).unwrap();
        assert_eq!(b.samples(), &[0.1, 0.1, 0.3, 0.3, 0.7, 0.7, 0.9, 0.9]);

        let mut two = BTreeMap::new();
        two.insert(key(0), dist(&[0.8]));
        two.insert(key(1), dist(&[0.2]));
        let w: BTreeMap<_, _> = two.keys().map(|k| (k.clone(), 0.5)).collect();
        let b = w1_barycenter(&two, &w, 4).unwrap();
        assert!(b.samples().iter().all(|&v| v == 0.2));
    }

    #[test]
    fn barycenter_weight_validation() {
        let mut g = BTreeMap::new();
        g.insert(key(0), dist(&[0.1]));
        let mut w = BTreeMap::new();
        w.insert(key(0), 0.7);
        assert!(w1_barycenter(&g, &w, 10).is_err());
        w.insert(key(1), 0.3);
        assert!(w1_barycenter(&g, &w, 10).is_err());
    }
}
