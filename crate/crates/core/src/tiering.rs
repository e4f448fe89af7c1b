//! Dataset quality tiers from pooled-normalized resolution and blurriness.
//!
//! Each image feature is normalized over the union of all datasets, then
//! summarized per dataset. Datasets are ranked by
//! `mean(resolution) - mean(blurriness)` and split into low, medium and high
//! quality. Luminosity is reported but does not enter the score.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{mean_std, MeanStd};
use crate::subjfeat::{Feature, FeatureRow};

/// The image-based features summarized per dataset.
pub const IMAGE_FEATURES: [Feature; 3] = [Feature::Resolution, Feature::Luminosity, Feature::Blurriness];

/// Scores closer than this are treated as ties.
const SCORE_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TierError {
    #[error("all pooled values of {0} are equal")]
    ConstantPool(String),
    #[error("no values to normalize")]
    EmptyPool,
}

impl TierError {
    pub fn kind(&self) -> &'static str {
        match self {
            TierError::ConstantPool(_) => "ConstantPool",
            TierError::EmptyPool => "EmptyPool",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    #[default]
    MinMax,
    ZScore,
}

impl FromStr for NormMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "minmax" => Ok(NormMode::MinMax),
            "zscore" => Ok(NormMode::ZScore),
            other => Err(format!("unknown normalization {other:?} (expected minmax or zscore)")),
        }
    }
}

impl NormMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NormMode::MinMax => "minmax",
            NormMode::ZScore => "zscore",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "low" => Ok(Tier::Low),
            "medium" => Ok(Tier::Medium),
            "high" => Ok(Tier::High),
            other => Err(format!("unknown tier {other:?}")),
        }
    }
}

/// Normalizes every group with statistics of the pooled union of groups.
pub fn normalize_pooled(
    groups: &BTreeMap<String, Vec<f64>>,
    mode: NormMode,
    feature_name: &str,
) -> Result<BTreeMap<String, Vec<f64>>, TierError> {
    let pooled: Vec<f64> = groups.values().flatten().copied().collect();
    if pooled.is_empty() {
        return Err(TierError::EmptyPool);
    }
    let transform: Box<dyn Fn(f64) -> f64> = match mode {
        NormMode::MinMax => {
            let min = pooled.iter().copied().fold(f64::INFINITY, f64::min);
            let max = pooled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == min {
                return Err(TierError::ConstantPool(feature_name.to_string()));
            }
            Box::new(move |v| (v - min) / (max - min))
        }
        NormMode::ZScore => {
            let ms = mean_std(pooled.iter().copied());
            if ms.std == 0.0 {
                return Err(TierError::ConstantPool(feature_name.to_string()));
            }
            Box::new(move |v| (v - ms.mean) / ms.std)
        }
    };
    Ok(groups
        .iter()
        .map(|(k, vs)| (k.clone(), vs.iter().map(|&v| transform(v)).collect()))
        .collect())
}

/// Per dataset: normalized mean and std of resolution, luminosity and
/// blurriness (in [`IMAGE_FEATURES`] order), plus the sample count.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetStats {
    pub datasets: BTreeMap<String, DatasetRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub count: usize,
    pub features: [MeanStd; 3],
}

impl DatasetRow {
    pub fn resolution(&self) -> MeanStd {
        self.features[0]
    }

    pub fn luminosity(&self) -> MeanStd {
        self.features[1]
    }

    pub fn blurriness(&self) -> MeanStd {
        self.features[2]
    }
}

/// Summarizes already-normalized values, one map per image feature.
pub fn stats_from_normalized(normalized: &[BTreeMap<String, Vec<f64>>; 3]) -> DatasetStats {
    let mut datasets = BTreeMap::new();
    for name in normalized[0].keys() {
        let features = [0, 1, 2].map(|k| {
            mean_std(normalized[k].get(name).into_iter().flatten().copied())
        });
        datasets.insert(
            name.clone(),
            DatasetRow {
                count: normalized[0][name].len(),
                features,
            },
        );
    }
    DatasetStats { datasets }
}

/// Groups rows by dataset, normalizes each image feature over the pool and
/// summarizes per dataset.
pub fn dataset_stats(rows: &[FeatureRow], mode: NormMode) -> Result<DatasetStats, TierError> {
    let mut normalized: [BTreeMap<String, Vec<f64>>; 3] = Default::default();
    for (slot, f) in normalized.iter_mut().zip(IMAGE_FEATURES) {
        let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in rows {
            groups.entry(r.dataset.clone()).or_default().push(r.value(f));
        }
        *slot = normalize_pooled(&groups, mode, f.name())?;
    }
    Ok(stats_from_normalized(&normalized))
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TierAssignment {
    pub tiers: BTreeMap<String, Tier>,
    /// Quality score per dataset.
    pub scores: BTreeMap<String, f64>,
    /// Pairs of datasets whose scores tied, resolved by lower blurriness and
    /// then by name.
    pub tie_breaks: Vec<(String, String)>,
}

impl TierAssignment {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Tier)>) -> Self {
        TierAssignment {
            tiers: pairs.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn tier_of(&self, dataset: &str) -> Option<Tier> {
        self.tiers.get(dataset).copied()
    }
}

/// `mean(resolution) - mean(blurriness)` of the normalized values.
pub fn quality_score(row: &DatasetRow) -> f64 {
    row.resolution().mean - row.blurriness().mean
}

fn tier_for_rank(rank: usize, count: usize) -> Tier {
    match count {
        1 => Tier::Medium,
        _ if rank == 0 => Tier::Low,
        _ if rank + 1 == count => Tier::High,
        _ => Tier::Medium,
    }
}

/// Ranks datasets by ascending quality score: the lowest is `low`, the
/// highest `high`, everything in between `medium`.
pub fn assign_tiers(stats: &DatasetStats) -> TierAssignment {
    let mut order: Vec<(&String, &DatasetRow, f64)> = stats
        .datasets
        .iter()
        .map(|(name, row)| (name, row, quality_score(row)))
        .collect();
    order.sort_by(|a, b| {
        if (a.2 - b.2).abs() <= SCORE_EPS {
            // Higher blurriness ranks lower.
            b.1.blurriness()
                .mean
                .total_cmp(&a.1.blurriness().mean)
                .then(a.0.cmp(b.0))
        } else {
            a.2.total_cmp(&b.2)
        }
    });

    let mut assignment = TierAssignment::default();
    for pair in order.windows(2) {
        if (pair[0].2 - pair[1].2).abs() <= SCORE_EPS {
            log::warn!("quality scores of {} and {} tie", pair[0].0, pair[1].0);
            assignment
                .tie_breaks
                .push((pair[0].0.clone(), pair[1].0.clone()));
        }
    }
    let count = order.len();
    for (rank, (name, _, score)) in order.into_iter().enumerate() {
        assignment.tiers.insert(name.clone(), tier_for_rank(rank, count));
        assignment.scores.insert(name.clone(), score);
    }
    assignment
}
