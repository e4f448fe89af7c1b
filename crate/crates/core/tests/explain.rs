use biomaudit::explain::{
    fit_surrogate, shapley_exact, tree_shapley, Node, SurrogateKind, SurrogateParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sse(y: &[f64]) -> f64 {
    if y.is_empty() {
        return 0.0;
    }
    let m = y.iter().sum::<f64>() / y.len() as f64;
    y.iter().map(|v| (v - m) * (v - m)).sum()
}

/// Best single split by brute force over every feature and every observed
/// value as a cut.
fn best_stump(x: &[Vec<f64>], y: &[f64]) -> f64 {
    let mut best = sse(y);
    for f in 0..x[0].len() {
        for cut in x.iter().map(|r| r[f]) {
            let (l, r): (Vec<f64>, Vec<f64>) = {
                let mut l = Vec::new();
                let mut r = Vec::new();
                for (row, &v) in x.iter().zip(y) {
                    if row[f] <= cut {
                        l.push(v)
                    } else {
                        r.push(v)
                    }
                }
                (l, r)
            };
            if l.is_empty() || r.is_empty() {
                continue;
            }
            best = best.min(sse(&l) + sse(&r));
        }
    }
    best
}

#[test]
fn depth_one_cart_matches_exhaustive_stump() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..30 {
        let n = rng.gen_range(10..40);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..3).map(|_| rng.gen_range(0..8) as f64).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0..2) as f64).collect();
        let params = SurrogateParams {
            kind: SurrogateKind::Cart,
            max_depth: 1,
            ..Default::default()
        };
        let (model, report) = fit_surrogate(&x, &y, &params).unwrap();
        if report.constant_labels {
            continue;
        }
        let fitted: f64 = x
            .iter()
            .zip(&y)
            .map(|(r, v)| (model.predict(r) - v).powi(2))
            .sum();
        assert!((fitted - best_stump(&x, &y)).abs() < 1e-9, "{fitted}");
        assert!(model.trees()[0].nodes().len() <= 3);
    }
}

#[test]
fn label_from_resolution_only_ranks_it_first() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..80)
        .map(|_| (0..7).map(|_| rng.gen_range(0.0..1.0)).collect())
        .collect();
    let y: Vec<f64> = x.iter().map(|r| (r[0] > 0.5) as u8 as f64).collect();
    let (model, _) = fit_surrogate(&x, &y, &SurrogateParams::default()).unwrap();
    let bg = &x[..30];
    let mut mean_abs = [0.0; 7];
    for row in &x[..20] {
        let fast = tree_shapley(&model, row, bg).unwrap();
        let brute = shapley_exact(|z| model.predict(z), row, bg).unwrap();
        for ((acc, f), b) in mean_abs.iter_mut().zip(&fast.phi).zip(&brute.phi) {
            assert!((f - b).abs() < 1e-12);
            *acc += f.abs();
        }
    }
    let top = (0..7).max_by(|&a, &b| mean_abs[a].total_cmp(&mean_abs[b])).unwrap();
    assert_eq!(top, 0, "{mean_abs:?}");
    // Features the surrogate never splits on get exactly zero.
    let used: std::collections::BTreeSet<usize> = model
        .trees()
        .iter()
        .flat_map(|t| t.nodes().iter())
        .filter_map(|n| match n {
            Node::Split { feature, .. } => Some(*feature),
            Node::Leaf { .. } => None,
        })
        .collect();
    for i in (0..7).filter(|i| !used.contains(i)) {
        assert_eq!(mean_abs[i], 0.0);
    }
}
