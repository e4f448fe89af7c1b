//! Regression trees and the gradient-boosted surrogate fitted to meta-labels.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ExplainError;

/// Smallest training set accepted by [`fit_surrogate`].
pub const MIN_TRAINING_ROWS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf { value: f64 },
}

/// Binary regression tree stored as a node arena, root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf(value: f64) -> Tree {
        Tree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Builds a tree from an arena. Child indices must point forward.
    pub fn from_nodes(nodes: Vec<Node>) -> Result<Tree, String> {
        if nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        for (i, n) in nodes.iter().enumerate() {
            if let Node::Split { left, right, threshold, .. } = *n {
                if left <= i || right <= i || left >= nodes.len() || right >= nodes.len() {
                    return Err(format!("node {i} has invalid children"));
                }
                if threshold.is_nan() {
                    return Err(format!("node {i} has a NaN threshold"));
                }
            }
        }
        Ok(Tree { nodes })
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, left).max(go(nodes, right)),
            }
        }
        go(&self.nodes, 0)
    }

    pub fn used_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
    }

    fn scale_leaves(&mut self, factor: f64) {
        for n in &mut self.nodes {
            if let Node::Leaf { value } = n {
                *value *= factor;
            }
        }
    }
}

/// `base + sum of tree outputs`. Shrinkage is already folded into the leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeEnsemble {
    n_features: usize,
    base: f64,
    trees: Vec<Tree>,
}

impl TreeEnsemble {
    pub fn new(n_features: usize, base: f64, trees: Vec<Tree>) -> Result<Self, String> {
        for (t, tree) in trees.iter().enumerate() {
            if let Some(f) = tree.used_features().find(|&f| f >= n_features) {
                return Err(format!("tree {t} splits on feature {f} >= {n_features}"));
            }
        }
        Ok(TreeEnsemble {
            n_features,
            base,
            trees,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn max_depth(&self) -> usize {
        self.trees.iter().map(Tree::depth).max().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SurrogateKind {
    /// Gradient-boosted trees with squared loss.
    #[default]
    Gbdt,
    /// One regression tree fitted to the labels.
    Cart,
}

impl std::str::FromStr for SurrogateKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gbdt" => Ok(SurrogateKind::Gbdt),
            "cart" => Ok(SurrogateKind::Cart),
            other => Err(format!("unknown surrogate {other:?} (expected gbdt or cart)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateParams {
    pub kind: SurrogateKind,
    pub max_depth: usize,
    pub n_trees: usize,
    pub shrinkage: f64,
    pub min_samples_leaf: usize,
    /// Fraction of rows drawn (without replacement) for each boosting round.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for SurrogateParams {
    fn default() -> Self {
        SurrogateParams {
            kind: SurrogateKind::Gbdt,
            max_depth: 3,
            n_trees: 100,
            shrinkage: 0.1,
            min_samples_leaf: 1,
            subsample: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    /// Mean squared error against the labels on the training rows.
    pub training_loss: f64,
    /// Fraction of rows where the prediction rounds to the label.
    pub training_accuracy: f64,
    pub constant_labels: bool,
}

/// Fits the surrogate. Deterministic in `(x, y, params)`.
pub fn fit_surrogate(
    x: &[Vec<f64>],
    y: &[f64],
    params: &SurrogateParams,
) -> Result<(TreeEnsemble, FitReport), ExplainError> {
    if x.len() != y.len() {
        return Err(ExplainError::ShapeMismatch(format!(
            "{} feature rows but {} labels",
            x.len(),
            y.len()
        )));
    }
    if x.len() < MIN_TRAINING_ROWS {
        return Err(ExplainError::TooFewSamples(x.len()));
    }
    let n_features = x[0].len();
    if n_features == 0 || x.iter().any(|r| r.len() != n_features) {
        return Err(ExplainError::ShapeMismatch("ragged feature matrix".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(ExplainError::ShapeMismatch("non-finite training value".into()));
    }

    let constant = y.iter().all(|&v| v == y[0]);
    let ensemble = if constant {
        log::info!("constant labels; surrogate is a single leaf");
        TreeEnsemble {
            n_features,
            base: 0.0,
            trees: vec![Tree::leaf(y[0])],
        }
    } else {
        match params.kind {
            SurrogateKind::Cart => {
                let rows: Vec<usize> = (0..x.len()).collect();
                let tree = TreeBuilder::new(x, y, params).build(rows);
                TreeEnsemble {
                    n_features,
                    base: 0.0,
                    trees: vec![tree],
                }
            }
            SurrogateKind::Gbdt => fit_boosted(x, y, params, n_features),
        }
    };

    let preds: Vec<f64> = x.iter().map(|r| ensemble.predict(r)).collect();
    let n = y.len() as f64;
    let training_loss = preds.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
    let training_accuracy = preds
        .iter()
        .zip(y)
        .filter(|(p, t)| ((**p >= 0.5) as u8 as f64) == **t)
        .count() as f64
        / n;
    Ok((
        ensemble,
        FitReport {
            training_loss,
            training_accuracy,
            constant_labels: constant,
        },
    ))
}

fn fit_boosted(x: &[Vec<f64>], y: &[f64], params: &SurrogateParams, n_features: usize) -> TreeEnsemble {
    let n = y.len();
    let base = y.iter().sum::<f64>() / n as f64;
    let mut preds = vec![base; n];
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let take = ((params.subsample.clamp(0.0, 1.0) * n as f64).round() as usize).clamp(1, n);

    let mut trees = Vec::with_capacity(params.n_trees);
    for _ in 0..params.n_trees {
        let residual: Vec<f64> = y.iter().zip(&preds).map(|(t, p)| t - p).collect();
        let rows: Vec<usize> = if take == n {
            (0..n).collect()
        } else {
            let mut idx = sample(&mut rng, n, take).into_vec();
            idx.sort_unstable();
            idx
        };
        let mut tree = TreeBuilder::new(x, &residual, params).build(rows);
        tree.scale_leaves(params.shrinkage);
        for (p, row) in preds.iter_mut().zip(x) {
            *p += tree.predict(row);
        }
        trees.push(tree);
    }
    TreeEnsemble {
        n_features,
        base,
        trees,
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    target: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl<'a> TreeBuilder<'a> {
    fn new(x: &'a [Vec<f64>], target: &'a [f64], params: &SurrogateParams) -> Self {
        TreeBuilder {
            x,
            target,
            max_depth: params.max_depth,
            min_leaf: params.min_samples_leaf.max(1),
            nodes: Vec::new(),
        }
    }

    fn build(mut self, rows: Vec<usize>) -> Tree {
        self.grow(rows, 0);
        Tree { nodes: self.nodes }
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let mean = rows.iter().map(|&r| self.target[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        if depth >= self.max_depth || rows.len() < 2 * self.min_leaf {
            return id;
        }
        let Some(best) = self.best_split(&rows) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.x[i][best.feature] <= best.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        id
    }

    /// Exhaustive search over features and midpoints between distinct sorted
    /// values, maximising the reduction in squared error. Ties keep the
    /// earliest feature and the smallest threshold.
    fn best_split(&self, rows: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let total: f64 = rows.iter().map(|&r| self.target[r]).sum();
        let parent = total * total / n as f64;
        let n_features = self.x[rows[0]].len();

        let mut best: Option<BestSplit> = None;
        let mut order = rows.to_vec();
        for feature in 0..n_features {
            order.sort_by(|&a, &b| {
                self.x[a][feature]
                    .total_cmp(&self.x[b][feature])
                    .then(a.cmp(&b))
            });
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.target[order[k]];
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.min_leaf || nr < self.min_leaf {
                    continue;
                }
                let lo = self.x[order[k]][feature];
                let hi = self.x[order[k + 1]][feature];
                if lo == hi {
                    continue;
                }
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl as f64 + right_sum * right_sum / nr as f64 - parent;
                if gain > 1e-12 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = lo + (hi - lo) / 2.0;
                    let threshold = if mid < hi { mid } else { lo };
                    best = Some(BestSplit {
                        feature,
                        threshold,
                        gain,
                    });
                }
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn constant_labels_give_single_leaf() {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64; 7]).collect();
        let y = vec![1.0; 12];
        let (model, report) = fit_surrogate(&x, &y, &SurrogateParams::default()).unwrap();
        assert!(report.constant_labels);
        assert_eq!(model.trees().len(), 1);
        assert_eq!(model.trees()[0].nodes(), &[Node::Leaf { value: 1.0 }]);
        assert_eq!(model.predict(&x[3]), 1.0);
    }

    #[test]
    fn too_few_rows() {
        let x = vec![vec![0.0; 7]; 9];
        assert_eq!(
            fit_surrogate(&x, &[0.0; 9], &SurrogateParams::default()).unwrap_err(),
            ExplainError::TooFewSamples(9)
        );
    }

    #[test]
    fn separable_single_split() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![0.5, i as f64, 3.0]).collect();
        let y: Vec<f64> = (0..20).map(|i| (i >= 8) as u8 as f64).collect();
        let params = SurrogateParams {
            kind: SurrogateKind::Cart,
            max_depth: 2,
            ..Default::default()
        };
        let (model, report) = fit_surrogate(&x, &y, &params).unwrap();
        assert_eq!(report.training_accuracy, 1.0);
        let tree = &model.trees()[0];
        assert_eq!(tree.depth(), 1);
        assert_eq!(
            tree.nodes()[0],
            Node::Split { feature: 1, threshold: 7.5, left: 1, right: 2 }
        );
    }

    #[test]
    fn boosting_reduces_loss_and_is_reproducible() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<Vec<f64>> = (0..100).map(|_| (0..4).map(|_| rng.gen()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| (r[0] + 0.3 * r[2] > 0.6) as u8 as f64).collect();
        let params = SurrogateParams { n_trees: 30, subsample: 0.7, seed: 11, ..Default::default() };
        let (a, ra) = fit_surrogate(&x, &y, &params).unwrap();
        let (b, _) = fit_surrogate(&x, &y, &params).unwrap();
        assert_eq!(a, b);
        assert!(a.max_depth() <= 3);

        let one = SurrogateParams { n_trees: 1, ..params };
        let (_, r1) = fit_surrogate(&x, &y, &one).unwrap();
        assert!(ra.training_loss < r1.training_loss);
    }

    #[test]
    fn ensemble_rejects_out_of_range_feature() {
        let tree = Tree::from_nodes(vec![
            Node::Split { feature: 4, threshold: 0.0, left: 1, right: 2 },
            Node::Leaf { value: 0.0 },
            Node::Leaf { value: 1.0 },
        ])
        .unwrap();
        assert!(TreeEnsemble::new(3, 0.0, vec![tree]).is_err());
    }
}
