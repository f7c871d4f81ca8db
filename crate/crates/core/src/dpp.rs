//! Quantile post-processing: each group's score is replaced by the target
//! quantile at the score's rank within that group's fitting sample.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::GroupKey;
use crate::error::{Error, Result};
use crate::metrics::EmpiricalDistribution;

/// Sorted per-group source samples and the sorted target sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "QuantileMapFile", try_from = "QuantileMapFile")]
pub struct QuantileMap {
    groups: BTreeMap<GroupKey, Vec<f64>>,
    target: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GroupSample {
    group: GroupKey,
    samples: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct QuantileMapFile {
    groups: Vec<GroupSample>,
    target: Vec<f64>,
}

impl From<QuantileMap> for QuantileMapFile {
    fn from(m: QuantileMap) -> Self {
        Self {
            groups: m
                .groups
                .into_iter()
                .map(|(group, samples)| GroupSample { group, samples })
                .collect(),
            target: m.target,
        }
    }
}

impl TryFrom<QuantileMapFile> for QuantileMap {
    type Error = Error;

    fn try_from(f: QuantileMapFile) -> Result<Self> {
        let groups = f
            .groups
            .into_iter()
            .map(|g| Ok((g.group, EmpiricalDistribution::new(g.samples)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        fit_dpp(&groups, &EmpiricalDistribution::new(f.target)?)
    }
}

impl QuantileMap {
    pub fn groups(&self) -> impl Iterator<Item = &GroupKey> {
        self.groups.keys()
    }

    pub fn group_samples(&self, a: &GroupKey) -> Option<&[f64]> {
        self.groups.get(a).map(Vec::as_slice)
    }

    pub fn target_samples(&self) -> &[f64] {
        &self.target
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Stores sorted copies of every group sample and of the target sample.
pub fn fit_dpp(
    groups: &BTreeMap<GroupKey, EmpiricalDistribution>,
    target: &EmpiricalDistribution,
) -> Result<QuantileMap> {
    if groups.is_empty() {
        return Err(Error::Parameter("no groups to fit".into()));
    }
    if let Some((k, _)) = groups.iter().find(|(_, d)| d.is_empty()) {
        return Err(Error::Parameter(format!("group {k} has no samples")));
    }
    Ok(QuantileMap {
        groups: groups.iter().map(|(k, d)| (k.clone(), d.samples().to_vec())).collect(),
        target: target.samples().to_vec(),
    })
}

/// `Q̄(F_a(s))` with `F_a(s) = #{x ≤ s} / n` and `Q̄(u) = y_(⌈u m⌉)`, the
/// lowest order statistic standing in for `u = 0`.
pub fn dpp_transform(m: &QuantileMap, a: &GroupKey, s: f64) -> Result<f64> {
    let src = m
        .groups
        .get(a)
        .ok_or_else(|| Error::UnknownGroup(a.to_string()))?;
    let n = src.len();
    let t = m.target.len();
    let rank = src.partition_point(|&x| x <= s);
    // ⌈rank · t / n⌉ in exact integer arithmetic.
    let k = ((rank * t).div_ceil(n)).max(1);
    Ok(m.target[k - 1])
}
