//! Aggregations over explanations: mean-|phi| ranking, dependence data and
//! per-tier tables.

use std::collections::BTreeMap;
use std::fmt;

use super::{ExplainError, ShapleyExplanation};
use crate::subjfeat::Feature;
use crate::tiering::{Tier, TierAssignment};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Positive,
    Negative,
    Neutral,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Positive => "positive",
            Direction::Negative => "negative",
            Direction::Neutral => "neutral",
        }
    }

    fn from_correlation(r: f64) -> Direction {
        if !r.is_finite() || r.abs() < 1e-12 {
            Direction::Neutral
        } else if r > 0.0 {
            Direction::Positive
        } else {
            Direction::Negative
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "positive" => Ok(Direction::Positive),
            "negative" => Ok(Direction::Negative),
            "neutral" => Ok(Direction::Neutral),
            other => Err(format!("unknown direction {other:?}")),
        }
    }
}

/// Pearson correlation; NaN when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImportance {
    pub feature: Feature,
    pub mean_abs_phi: f64,
    pub direction: Direction,
}

/// Features ranked by descending mean |phi|; ties keep column order.
/// Direction is the sign of the correlation between value and phi.
pub fn mean_abs_shap(explanations: &[ShapleyExplanation]) -> Vec<FeatureImportance> {
    let n = explanations.len().max(1) as f64;
    let mut ranked: Vec<FeatureImportance> = Feature::ALL
        .into_iter()
        .map(|f| {
            let i = f.index();
            let values: Vec<f64> = explanations.iter().map(|e| e.values[i]).collect();
            let phi: Vec<f64> = explanations.iter().map(|e| e.phi[i]).collect();
            FeatureImportance {
                feature: f,
                mean_abs_phi: phi.iter().map(|p| p.abs()).sum::<f64>() / n,
                direction: Direction::from_correlation(pearson(&values, &phi)),
            }
        })
        .collect();
    ranked.sort_by(|a, b| {
        b.mean_abs_phi
            .total_cmp(&a.mean_abs_phi)
            .then(a.feature.cmp(&b.feature))
    });
    ranked
}

/// The other feature whose values correlate most (in absolute value) with
/// `feature`'s phi. Falls back to the first other feature.
pub fn default_interaction(explanations: &[ShapleyExplanation], feature: Feature) -> Feature {
    let phi: Vec<f64> = explanations.iter().map(|e| e.phi[feature.index()]).collect();
    let mut best: Option<(Feature, f64)> = None;
    for other in Feature::ALL.into_iter().filter(|&f| f != feature) {
        let values: Vec<f64> = explanations.iter().map(|e| e.values[other.index()]).collect();
        let r = pearson(&values, &phi).abs();
        if r.is_finite() && best.is_none_or(|(_, b)| r > b) {
            best = Some((other, r));
        }
    }
    best.map(|(f, _)| f).unwrap_or_else(|| {
        Feature::ALL
            .into_iter()
            .find(|&f| f != feature)
            .expect("more than one feature")
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DependencePoint {
    pub sample_id: String,
    pub value: f64,
    pub phi: f64,
    pub interaction_value: f64,
}

/// One point per explanation, ordered by sample id.
pub fn dependence_data(
    explanations: &[ShapleyExplanation],
    feature: Feature,
    interaction: Feature,
) -> Vec<DependencePoint> {
    let mut sorted: Vec<&ShapleyExplanation> = explanations.iter().collect();
    sorted.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    sorted
        .into_iter()
        .map(|e| DependencePoint {
            sample_id: e.sample_id.clone(),
            value: e.values[feature.index()],
            phi: e.phi[feature.index()],
            interaction_value: e.values[interaction.index()],
        })
        .collect()
}

/// Mean |phi| per feature (rows) and tier (columns, low to high, only tiers
/// that occur).
#[derive(Debug, Clone, PartialEq)]
pub struct PerTierTable {
    pub tiers: Vec<Tier>,
    pub rows: Vec<(Feature, Vec<f64>)>,
}

pub fn per_quality_shap(
    explanations: &[ShapleyExplanation],
    tiers: &TierAssignment,
) -> Result<PerTierTable, ExplainError> {
    let mut groups: BTreeMap<Tier, Vec<&ShapleyExplanation>> = BTreeMap::new();
    for e in explanations {
        let tier = tiers
            .tier_of(&e.dataset)
            .ok_or_else(|| ExplainError::MissingTier(e.dataset.clone()))?;
        groups.entry(tier).or_default().push(e);
    }
    let tier_list: Vec<Tier> = groups.keys().copied().collect();
    let rows = Feature::ALL
        .into_iter()
        .map(|f| {
            let cols = groups
                .values()
                .map(|g| g.iter().map(|e| e.phi[f.index()].abs()).sum::<f64>() / g.len() as f64)
                .collect();
            (f, cols)
        })
        .collect();
    Ok(PerTierTable {
        tiers: tier_list,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subjfeat::NUM_FEATURES;

    fn expl(id: &str, dataset: &str, values: [f64; NUM_FEATURES], phi: [f64; NUM_FEATURES]) -> ShapleyExplanation {
        ShapleyExplanation {
            sample_id: id.into(),
            dataset: dataset.into(),
            values,
            phi,
            base: 0.5,
            prediction: 0.5 + phi.iter().sum::<f64>(),
        }
    }

    #[test]
    fn zero_phi_ranks_last_and_direction_sign() {
        let e: Vec<ShapleyExplanation> = (0..6)
            .map(|i| {
                let high = i % 2 == 0;
                let mut values = [i as f64; NUM_FEATURES];
                values[0] = if high { 10.0 } else { 1.0 };
                let mut phi = [0.01 * i as f64; NUM_FEATURES];
                phi[0] = if high { 0.3 } else { -0.3 };
                phi[4] = 0.0;
                expl(&format!("s{i}"), "d", values, phi)
            })
            .collect();
        let ranked = mean_abs_shap(&e);
        assert_eq!(ranked[0].feature, Feature::Resolution);
        assert_eq!(ranked[0].direction, Direction::Positive);
        assert!((ranked[0].mean_abs_phi - 0.3).abs() < 1e-12);
        let last = ranked.last().unwrap();
        assert_eq!(last.feature, Feature::UpperConf);
        assert_eq!(last.mean_abs_phi, 0.0);
        assert_eq!(last.direction, Direction::Neutral);
    }

    #[test]
    fn fifty_sample_ranking_matches_recomputation() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let e: Vec<ShapleyExplanation> = (0..50)
            .map(|i| {
                let mut values = [0.0; NUM_FEATURES];
                let mut phi = [0.0; NUM_FEATURES];
                for k in 0..NUM_FEATURES {
                    values[k] = next();
                    phi[k] = next() * (k as f64 + 1.0) * if k % 2 == 0 { 1.0 } else { 0.3 };
                }
                expl(&format!("s{i:02}"), "d", values, phi)
            })
            .collect();
        let ranked = mean_abs_shap(&e);

        let mut expected: Vec<(usize, f64)> = (0..NUM_FEATURES)
            .map(|k| (k, e.iter().map(|x| x.phi[k].abs()).sum::<f64>() / 50.0))
            .collect();
        expected.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        for (r, (k, m)) in ranked.iter().zip(&expected) {
            assert_eq!(r.feature.index(), *k);
            assert!((r.mean_abs_phi - m).abs() < 1e-12);
        }
    }

    #[test]
    fn dependence_cases() {
        assert!(dependence_data(&[], Feature::FaceConf, Feature::LowerConf).is_empty());
        let e: Vec<ShapleyExplanation> = ["c", "a", "e", "b", "d"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                let v = [i as f64, 1.0, 2.0, 0.1 * i as f64, 0.5, 0.2 * (i * i) as f64, 0.0];
                let mut phi = [0.0; NUM_FEATURES];
                phi[3] = -0.05 * i as f64;
                expl(id, "d", v, phi)
            })
            .collect();
        let same = dependence_data(&e, Feature::FaceConf, Feature::FaceConf);
        assert_eq!(same.len(), 5);
        assert!(same.iter().all(|p| p.value == p.interaction_value));
        let pts = dependence_data(&e, Feature::FaceConf, Feature::LowerConf);
        // sorted a, b, c, d, e = input positions 1, 3, 0, 4, 2
        let order = [1usize, 3, 0, 4, 2];
        for (p, &i) in pts.iter().zip(&order) {
            assert_eq!(p.value, e[i].values[3]);
            assert_eq!(p.phi, e[i].phi[3]);
            assert_eq!(p.interaction_value, e[i].values[5]);
        }
        // face phi is an exact linear function of resolution only.
        assert_eq!(default_interaction(&e, Feature::FaceConf), Feature::Resolution);
    }

    fn tiers(pairs: &[(&str, Tier)]) -> TierAssignment {
        TierAssignment::from_pairs(pairs.iter().map(|(d, t)| (d.to_string(), *t)))
    }

    #[test]
    fn per_tier_grouping() {
        let mk = |id: &str, ds: &str, p: f64| expl(id, ds, [0.0; NUM_FEATURES], [p; NUM_FEATURES]);
        let e = vec![
            mk("a", "PETA", 0.4),
            mk("b", "PETA", -0.2),
            mk("c", "RAP", 0.1),
            mk("d", "PA-100K", -0.5),
            mk("e", "RAP", 0.3),
        ];
        let t = tiers(&[("PETA", Tier::Low), ("PA-100K", Tier::Medium), ("RAP", Tier::High)]);
        let table = per_quality_shap(&e, &t).unwrap();
        assert_eq!(table.tiers, vec![Tier::Low, Tier::Medium, Tier::High]);
        let (_, cols) = &table.rows[0];
        let expect = [(0.4 + 0.2) / 2.0, 0.5, (0.1 + 0.3) / 2.0];
        for (c, x) in cols.iter().zip(expect) {
            assert!((c - x).abs() < 1e-12);
        }

        let one = tiers(&[("PETA", Tier::Low)]);
        let table = per_quality_shap(&e[..2], &one).unwrap();
        assert_eq!(table.tiers, vec![Tier::Low]);
        assert!(matches!(
            per_quality_shap(&e, &one),
            Err(ExplainError::MissingTier(d)) if d == "RAP"
        ));

        // Identical explanation sets under two tiers give identical columns.
        let mut dup = e[..2].to_vec();
        dup.extend(e[..2].iter().map(|x| ShapleyExplanation { dataset: "RAP".into(), ..x.clone() }));
        let table = per_quality_shap(&dup, &tiers(&[("PETA", Tier::Low), ("RAP", Tier::High)])).unwrap();
        for (_, cols) in &table.rows {
            assert_eq!(cols[0], cols[1]);
        }
    }
}
