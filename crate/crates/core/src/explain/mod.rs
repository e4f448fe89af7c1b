//! Surrogate fitting and exact Shapley attribution of the meta-label.
//!
//! A tree model is fitted to map the seven analysis features to the
//! meta-label, and each sample's surrogate output is split into one additive
//! contribution per feature. Positive contributions push towards "every
//! model was right".

mod shapley;
mod summary;
mod tree;

pub use shapley::{
    attribution_from_values, coalition_values, coalition_weights, shapley_exact,
    tree_coalition_values, tree_shapley, Attribution, MAX_FEATURES, MAX_TREE_FEATURES,
};
pub use summary::{
    default_interaction, dependence_data, mean_abs_shap, pearson, per_quality_shap,
    DependencePoint, Direction, FeatureImportance, PerTierTable,
};
pub use tree::{
    fit_surrogate, FitReport, Node, SurrogateKind, SurrogateParams, Tree, TreeEnsemble,
    MIN_TRAINING_ROWS,
};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::subjfeat::{Feature, FeatureRow, NUM_FEATURES};

/// Default cap on the number of background rows.
pub const DEFAULT_BACKGROUND_CAP: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExplainError {
    #[error("need at least {MIN_TRAINING_ROWS} training rows, got {0}")]
    TooFewSamples(usize),
    #[error("{0}")]
    ShapeMismatch(String),
    #[error("cannot enumerate coalitions over {0} features")]
    TooManyFeatures(usize),
    #[error("background set is empty")]
    EmptyBackground,
    #[error("unknown feature {0:?}")]
    UnknownFeature(String),
    #[error("no quality tier for dataset {0:?}")]
    MissingTier(String),
}

impl ExplainError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExplainError::TooFewSamples(_) => "TooFewSamples",
            ExplainError::ShapeMismatch(_) => "ShapeMismatch",
            ExplainError::TooManyFeatures(_) => "TooManyFeatures",
            ExplainError::EmptyBackground => "EmptyBackground",
            ExplainError::UnknownFeature(_) => "UnknownFeature",
            ExplainError::MissingTier(_) => "MissingTier",
        }
    }
}

pub fn parse_feature(name: &str) -> Result<Feature, ExplainError> {
    name.parse()
        .map_err(|_| ExplainError::UnknownFeature(name.to_string()))
}

/// Attribution of one sample's surrogate output.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapleyExplanation {
    pub sample_id: String,
    pub dataset: String,
    /// Feature values of the sample.
    pub values: [f64; NUM_FEATURES],
    pub phi: [f64; NUM_FEATURES],
    /// Mean surrogate output over the background set.
    pub base: f64,
    /// Surrogate output at the sample.
    pub prediction: f64,
}

impl ShapleyExplanation {
    /// `{"base": r, "phi": {feature: r, ...}, "sample_id": s}`.
    pub fn to_json(&self) -> Value {
        let phi: Map<String, Value> = Feature::ALL
            .iter()
            .map(|f| (f.name().to_string(), json!(self.phi[f.index()])))
            .collect();
        json!({ "base": self.base, "phi": phi, "sample_id": self.sample_id })
    }

    /// `base + sum(phi) - prediction`.
    pub fn efficiency_gap(&self) -> f64 {
        self.base + self.phi.iter().sum::<f64>() - self.prediction
    }
}

/// Picks at most `cap` rows, sorted by original index, using a seeded RNG.
pub fn select_background(matrix: &[Vec<f64>], cap: usize, seed: u64) -> Vec<Vec<f64>> {
    if matrix.len() <= cap {
        return matrix.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, matrix.len(), cap).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| matrix[i].clone()).collect()
}

/// Explains every row against `background`. Rows are processed in parallel;
/// output order follows the input.
pub fn explain_rows(
    model: &TreeEnsemble,
    rows: &[FeatureRow],
    background: &[Vec<f64>],
) -> Result<Vec<ShapleyExplanation>, ExplainError> {
    rows.par_iter()
        .map(|row| {
            let values = row.values();
            let a = tree_shapley(model, &values, background)?;
            let mut phi = [0.0; NUM_FEATURES];
            phi.copy_from_slice(&a.phi);
            Ok(ShapleyExplanation {
                sample_id: row.sample_id.clone(),
                dataset: row.dataset.clone(),
                values,
                phi,
                base: a.base,
                prediction: model.predict(&values),
            })
        })
        .collect()
}
