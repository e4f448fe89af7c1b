//! Meta-label fusion, label-based mean accuracy (mA), face importance (FI)
//! and the correct-versus-all feature comparison.

use thiserror::Error;

use crate::ingest::Gender;
use crate::subjfeat::{Feature, FeatureRow, Pose};

/// mA of a classifier that guesses at random.
pub const RANDOM_BASELINE: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("no model predictions for the sample")]
    NoPredictions,
    #[error("attribute {attribute} has no positive or no negative examples")]
    EmptyClass { attribute: usize },
    #[error("invalid confusion counts for attribute {attribute}")]
    InvalidCounts { attribute: usize },
    #[error("reference mA {0} is not above the random baseline of 50")]
    DegenerateBaseline(f64),
    #[error("no row has meta-label 1")]
    EmptySelection,
}

impl MetricsError {
    pub fn kind(&self) -> &'static str {
        match self {
            MetricsError::NoPredictions => "NoPredictions",
            MetricsError::EmptyClass { .. } => "EmptyClass",
            MetricsError::InvalidCounts { .. } => "InvalidCounts",
            MetricsError::DegenerateBaseline(_) => "DegenerateBaseline",
            MetricsError::EmptySelection => "EmptySelection",
        }
    }
}

/// 1 iff every prediction equals the ground truth.
pub fn meta_label(preds: &[Gender], gt: Gender) -> Result<u8, MetricsError> {
    if preds.is_empty() {
        return Err(MetricsError::NoPredictions);
    }
    Ok(preds.iter().all(|&p| p == gt) as u8)
}

/// Confusion counts of one binary attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttributeCounts {
    pub positives: u64,
    pub true_positives: u64,
    pub negatives: u64,
    pub true_negatives: u64,
}

impl AttributeCounts {
    /// Counts over paired `(prediction, truth)` labels, male as positive.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Gender, Gender)>) -> Self {
        let mut c = AttributeCounts::default();
        for (pred, truth) in pairs {
            match truth {
                Gender::Male => {
                    c.positives += 1;
                    c.true_positives += (pred == Gender::Male) as u64;
                }
                Gender::Female => {
                    c.negatives += 1;
                    c.true_negatives += (pred == Gender::Female) as u64;
                }
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub attributes: Vec<AttributeCounts>,
}

impl ConfusionCounts {
    pub fn single(counts: AttributeCounts) -> Self {
        ConfusionCounts {
            attributes: vec![counts],
        }
    }
}

/// Label-based mean accuracy in percent:
/// `100 / (2M) * sum_i (TP_i / P_i + TN_i / N_i)`.
pub fn mean_accuracy(counts: &ConfusionCounts) -> Result<f64, MetricsError> {
    if counts.attributes.is_empty() {
        return Err(MetricsError::EmptyClass { attribute: 0 });
    }
    let mut total = 0.0;
    for (i, a) in counts.attributes.iter().enumerate() {
        if a.true_positives > a.positives || a.true_negatives > a.negatives {
            return Err(MetricsError::InvalidCounts { attribute: i });
        }
        if a.positives == 0 || a.negatives == 0 {
            return Err(MetricsError::EmptyClass { attribute: i });
        }
        total += a.true_positives as f64 / a.positives as f64
            + a.true_negatives as f64 / a.negatives as f64;
    }
    Ok(100.0 * total / (2.0 * counts.attributes.len() as f64))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceImportance {
    pub ma_face: f64,
    pub ma_max: f64,
    pub fi: f64,
}

/// `100 * (mA_f - 50) / (mA_max - 50)`, clamped to `[0, 100]`.
pub fn face_importance(ma_face: f64, ma_max: f64) -> Result<FaceImportance, MetricsError> {
    if ma_max.is_nan() || ma_max <= RANDOM_BASELINE {
        return Err(MetricsError::DegenerateBaseline(ma_max));
    }
    let raw = 100.0 * (ma_face - RANDOM_BASELINE) / (ma_max - RANDOM_BASELINE);
    Ok(FaceImportance {
        ma_face,
        ma_max,
        fi: raw.clamp(0.0, 100.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> MeanStd {
    let values: Vec<f64> = values.into_iter().collect();
    if values.is_empty() {
        return MeanStd::default();
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureComparison {
    pub feature: Feature,
    pub correct: MeanStd,
    pub all: MeanStd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseShare {
    pub pose: Pose,
    pub correct: f64,
    pub all: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    /// The six continuous features.
    pub features: Vec<FeatureComparison>,
    /// Fraction of rows per pose value.
    pub poses: Vec<PoseShare>,
    pub n_correct: usize,
    pub n_all: usize,
}

/// Feature statistics over rows where every model was right versus all rows.
pub fn compare_correct_vs_all(rows: &[FeatureRow]) -> Result<ComparisonReport, MetricsError> {
    let correct: Vec<&FeatureRow> = rows.iter().filter(|r| r.meta_label == 1).collect();
    if correct.is_empty() {
        return Err(MetricsError::EmptySelection);
    }
    let features = Feature::ALL
        .into_iter()
        .filter(|&f| f != Feature::Pose)
        .map(|f| FeatureComparison {
            feature: f,
            correct: mean_std(correct.iter().map(|r| r.value(f))),
            all: mean_std(rows.iter().map(|r| r.value(f))),
        })
        .collect();
    let share = |subset: &[&FeatureRow], pose: Pose| {
        subset.iter().filter(|r| r.subject.pose == pose).count() as f64 / subset.len() as f64
    };
    let all_refs: Vec<&FeatureRow> = rows.iter().collect();
    let poses = Pose::ALL
        .into_iter()
        .map(|pose| PoseShare {
            pose,
            correct: share(&correct, pose),
            all: share(&all_refs, pose),
        })
        .collect();
    Ok(ComparisonReport {
        features,
        poses,
        n_correct: correct.len(),
        n_all: rows.len(),
    })
}
