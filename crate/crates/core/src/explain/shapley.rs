//! Exact interventional Shapley values by coalition enumeration.
//!
//! The value of a coalition `S` is the mean model output over the background
//! rows, with features in `S` taken from the explained sample and the rest
//! from the background row. Attributions then follow the classic weighted
//! sum over all coalitions that exclude the feature.

use super::tree::{Node, TreeEnsemble};
use super::ExplainError;

/// Largest feature count accepted by [`shapley_exact`].
pub const MAX_FEATURES: usize = 20;

/// Largest feature count accepted by [`tree_coalition_values`].
pub const MAX_TREE_FEATURES: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub phi: Vec<f64>,
    /// Value of the empty coalition: mean output over the background.
    pub base: f64,
    /// Value of the full coalition, i.e. the model output at the sample.
    pub full: f64,
}

fn check_inputs(n: usize, background: &[Vec<f64>], limit: usize) -> Result<(), ExplainError> {
    if n == 0 || n > limit {
        return Err(ExplainError::TooManyFeatures(n));
    }
    if background.is_empty() {
        return Err(ExplainError::EmptyBackground);
    }
    if let Some(row) = background.iter().find(|b| b.len() != n) {
        return Err(ExplainError::ShapeMismatch(format!(
            "background row has {} columns, sample has {n}",
            row.len()
        )));
    }
    Ok(())
}

/// `v(S)` for every coalition, indexed by bitmask (bit `i` set means feature
/// `i` comes from the sample).
pub fn coalition_values(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>, ExplainError> {
    let n = x.len();
    check_inputs(n, background, MAX_FEATURES)?;
    let mut values = Vec::with_capacity(1 << n);
    let mut composite = vec![0.0; n];
    for mask in 0u32..(1u32 << n) {
        let mut sum = 0.0;
        for b in background {
            for i in 0..n {
                composite[i] = if mask >> i & 1 == 1 { x[i] } else { b[i] };
            }
            sum += f(&composite);
        }
        values.push(sum / background.len() as f64);
    }
    Ok(values)
}

/// Shapley weights `|S|! (n - |S| - 1)! / n!` indexed by `|S|`.
pub fn coalition_weights(n: usize) -> Vec<f64> {
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, k| {
            if k > 0 {
                *acc *= k as f64;
            }
            Some(*acc)
        })
        .collect();
    (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect()
}

/// Attributions from a complete table of coalition values.
pub fn attribution_from_values(values: &[f64]) -> Attribution {
    let n = values.len().trailing_zeros() as usize;
    debug_assert_eq!(values.len(), 1 << n);
    let weights = coalition_weights(n);
    let mut phi = vec![0.0; n];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..values.len() {
            if mask & bit == 0 {
                let size = mask.count_ones() as usize;
                acc += weights[size] * (values[mask | bit] - values[mask]);
            }
        }
        *p = acc;
    }
    Attribution {
        phi,
        base: values[0],
        full: values[values.len() - 1],
    }
}

/// Exact Shapley values of `f` at `x` against `background`.
pub fn shapley_exact(
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution, ExplainError> {
    Ok(attribution_from_values(&coalition_values(f, x, background)?))
}

/// Same table as [`coalition_values`] with `f` the ensemble, computed by
/// walking each tree once per background row.
///
/// Where the sample and the background row send a split the same way the
/// coalition does not matter; where they disagree the walk follows both
/// branches and records that the feature must be in (sample side) or out of
/// (background side) the coalition. Each reached leaf is credited to every
/// coalition consistent with those constraints.
pub fn tree_coalition_values(
    model: &TreeEnsemble,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Vec<f64>, ExplainError> {
    let n = x.len();
    if n != model.n_features() {
        return Err(ExplainError::ShapeMismatch(format!(
            "model expects {} features, sample has {n}",
            model.n_features()
        )));
    }
    check_inputs(n, background, MAX_TREE_FEATURES)?;

    // Accumulated leaf mass keyed by `in_mask | out_mask << n`.
    let mut mass = vec![0.0; 1 << (2 * n)];
    let mut stack: Vec<(usize, u32, u32)> = Vec::new();
    for tree in model.trees() {
        let nodes = tree.nodes();
        for b in background {
            stack.push((0, 0, 0));
            while let Some((i, in_mask, out_mask)) = stack.pop() {
                match nodes[i] {
                    Node::Leaf { value } => {
                        mass[(in_mask | out_mask << n) as usize] += value;
                    }
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        let x_left = x[feature] <= threshold;
                        let b_left = b[feature] <= threshold;
                        let side = |go_left: bool| if go_left { left } else { right };
                        let bit = 1u32 << feature;
                        if x_left == b_left || in_mask & bit != 0 {
                            stack.push((side(x_left), in_mask, out_mask));
                        } else if out_mask & bit != 0 {
                            stack.push((side(b_left), in_mask, out_mask));
                        } else {
                            stack.push((side(b_left), in_mask, out_mask | bit));
                            stack.push((side(x_left), in_mask | bit, out_mask));
                        }
                    }
                }
            }
        }
    }

    let full = (1u32 << n) - 1;
    let mut sums = vec![0.0; 1 << n];
    for (key, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        let in_mask = key as u32 & full;
        let out_mask = (key as u32 >> n) & full;
        let free = full & !(in_mask | out_mask);
        let mut sub = free;
        loop {
            sums[(in_mask | sub) as usize] += m;
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & free;
        }
    }
    let nb = background.len() as f64;
    Ok(sums.into_iter().map(|s| model.base() + s / nb).collect())
}

/// Exact Shapley values of a tree ensemble via [`tree_coalition_values`].
pub fn tree_shapley(
    model: &TreeEnsemble,
    x: &[f64],
    background: &[Vec<f64>],
) -> Result<Attribution, ExplainError> {
    Ok(attribution_from_values(&tree_coalition_values(model, x, background)?))
}
