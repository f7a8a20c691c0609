use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textrep::classify::{
    compute_metrics, evaluate_representation, knn_predict, train_linear_svm, train_random_forest, ClassifierSpec,
    ConfusionMatrix, Distance, ForestConfig, SvmConfig,
};
use textrep::Matrix;

/// Gaussian-ish blobs around well separated centers.
fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> (Matrix<f64>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        for _ in 0..per_class {
            rows.push(
                (0..dim)
                    .map(|j| if j % classes == c { 6.0 } else { 0.0 } + rng.random_range(-spread..spread))
                    .collect::<Vec<f64>>(),
            );
            labels.push(c);
        }
    }
    (Matrix::from_rows(&rows).unwrap(), labels)
}

/// Recounts one-vs-rest outcomes straight from label pairs.
fn brute_force(classes: usize, pairs: &[(usize, usize)]) -> Vec<[u64; 4]> {
    (0..classes)
        .map(|c| {
            let mut k = [0u64; 4];
            for &(actual, predicted) in pairs {
                let idx = match (actual == c, predicted == c) {
                    (true, true) => 0,
                    (false, true) => 1,
                    (true, false) => 2,
                    (false, false) => 3,
                };
                k[idx] += 1;
            }
            k
        })
        .collect()
}

fn safe_div(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[test]
fn metrics_match_brute_force_recount() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let classes = rng.random_range(1..=6);
        let n = rng.random_range(1..=60);
        let pairs: Vec<(usize, usize)> = (0..n)
            .map(|_| (rng.random_range(0..classes), rng.random_range(0..classes)))
            .collect();
        let actual: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&ConfusionMatrix::from_predictions(classes, &actual, &predicted).unwrap()).unwrap();
        let oracle = brute_force(classes, &pairs);
        let mut macro_acc = 0.0;
        for (c, k) in oracle.iter().enumerate() {
            let got = m.counts[c];
            assert_eq!([got.tp, got.fp, got.fn_, got.tn], *k);
            let (tp, fp, fneg, tn) = (k[0], k[1], k[2], k[3]);
            let acc = safe_div(tp + tn, tp + fp + fneg + tn);
            let rec = safe_div(tp, tp + fneg);
            let prec = safe_div(tp, tp + fp);
            let f1 = if prec + rec == 0.0 {
                0.0
            } else {
                2.0 * prec * rec / (prec + rec)
            };
            assert_eq!(m.per_class[c].accuracy, acc);
            assert_eq!(m.per_class[c].recall, rec);
            assert_eq!(m.per_class[c].precision, prec);
            assert_eq!(m.per_class[c].f1, f1);
            macro_acc += acc;
        }
        assert_eq!(m.macro_accuracy, macro_acc / classes as f64);
        let hits = pairs.iter().filter(|p| p.0 == p.1).count() as u64;
        assert_eq!(m.micro_accuracy, hits as f64 / n as f64);
        let diag: u64 = m.counts.iter().map(|k| k.tp).sum();
        assert_eq!(diag, hits);
    }
}

proptest! {
    #[test]
    fn confusion_counts_partition_the_samples(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80)) {
        let actual: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let predicted: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let m = compute_metrics(&ConfusionMatrix::from_predictions(4, &actual, &predicted).unwrap()).unwrap();
        for k in &m.counts {
            prop_assert_eq!(k.tp + k.fp + k.fn_ + k.tn, pairs.len() as u64);
        }
        for c in &m.per_class {
            for v in [c.accuracy, c.recall, c.precision, c.f1] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn knn_with_all_points_returns_global_majority(
        labels in prop::collection::vec(0usize..3, 1..30),
        seed in 0u64..1000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = labels.iter().map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let q = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let got = knn_predict(&x, &labels, &q, labels.len(), Distance::Euclidean).unwrap();
        let mut votes = [(0usize, 0.0f64); 3];
        for (r, &l) in rows.iter().zip(&labels) {
            votes[l].0 += 1;
            votes[l].1 += ((r[0] - q[0]).powi(2) + (r[1] - q[1]).powi(2)).sqrt();
        }
        let top = votes.iter().map(|v| v.0).max().unwrap();
        let expected = (0..3)
            .filter(|&l| votes[l].0 == top)
            .min_by(|&a, &b| votes[a].1.total_cmp(&votes[b].1).then(a.cmp(&b)))
            .unwrap();
        prop_assert_eq!(got, expected);
    }

    #[test]
    fn svm_decisions_are_affine(seed in 0u64..50) {
        let (x, y) = blobs(3, 10, 4, 1.0, seed);
        let svm = train_linear_svm(&x, &y, &SvmConfig { epochs: 3, standardize: false, ..SvmConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
        let q2: Vec<f64> = q.iter().map(|v| 2.0 * v).collect();
        let f0 = svm.decision_values(&[0.0f64; 4]);
        let f1 = svm.decision_values(&q);
        let f2 = svm.decision_values(&q2);
        for c in 0..3 {
            let scale = f2[c].abs().max(1.0);
            prop_assert!(((f2[c] - f1[c]) - (f1[c] - f0[c])).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn forest_fits_separable_blobs() {
    let (x, y) = blobs(2, 100, 4, 2.0, 5);
    let forest = train_random_forest(
        &x,
        &y,
        &ForestConfig {
            trees: 50,
            ..ForestConfig::default()
        },
    )
    .unwrap();
    let correct = x.iter_rows().zip(&y).filter(|(r, &l)| forest.predict(r) == l).count();
    assert!(correct as f64 / y.len() as f64 >= 0.95);
}

#[test]
fn forest_is_deterministic_per_seed() {
    let (x, y) = blobs(3, 30, 5, 3.0, 6);
    let cfg = ForestConfig {
        trees: 10,
        ..ForestConfig::default()
    };
    assert_eq!(
        train_random_forest(&x, &y, &cfg).unwrap(),
        train_random_forest(&x, &y, &cfg).unwrap()
    );
}

#[test]
fn svm_separates_two_blobs() {
    let (x, y) = blobs(2, 50, 3, 1.0, 7);
    let svm = train_linear_svm(
        &x,
        &y,
        &SvmConfig {
            epochs: 50,
            regularization: 1e-3,
            ..SvmConfig::default()
        },
    )
    .unwrap();
    let mut hinge_violations = 0;
    for (r, &l) in x.iter_rows().zip(&y) {
        let d = svm.decision_values(r);
        for (c, &v) in d.iter().enumerate() {
            let sign = if c == l { 1.0 } else { -1.0 };
            if sign * v < 1.0 {
                hinge_violations += 1;
            }
        }
    }
    assert_eq!(hinge_violations, 0);
}

#[test]
fn heavy_regularization_collapses_to_tie_break() {
    let (x, y) = blobs(3, 10, 3, 1.0, 8);
    let svm = train_linear_svm(
        &x,
        &y,
        &SvmConfig {
            regularization: 1e12,
            ..SvmConfig::default()
        },
    )
    .unwrap();
    assert!(svm.weights().as_slice().iter().all(|w| w.abs() < 1e-9));
    let q = [6.0, 0.0, 0.0];
    let d = svm.decision_values(&q);
    assert!(d.iter().all(|v| v.abs() < 1e-6));
}

fn duplicated(x: &Matrix<f64>, y: &[usize]) -> (Matrix<f64>, Vec<usize>) {
    let rows: Vec<Vec<f64>> = x.iter_rows().chain(x.iter_rows()).map(<[f64]>::to_vec).collect();
    (Matrix::from_rows(&rows).unwrap(), y.iter().chain(y).copied().collect())
}

#[test]
fn duplicating_the_training_set_keeps_predictions() {
    let (x, y) = blobs(3, 20, 4, 1.5, 9);
    let (xx, yy) = duplicated(&x, &y);
    let (queries, _) = blobs(3, 15, 4, 2.5, 10);

    let tree = ForestConfig {
        trees: 1,
        bootstrap: false,
        ..ForestConfig::default()
    };
    let a = train_random_forest(&x, &y, &tree).unwrap();
    let b = train_random_forest(&xx, &yy, &tree).unwrap();
    assert_eq!(a, b);

    let cfg = SvmConfig {
        epochs: 30,
        ..SvmConfig::default()
    };
    let a = train_linear_svm(&x, &y, &cfg).unwrap();
    let b = train_linear_svm(&xx, &yy, &cfg).unwrap();
    for q in queries.iter_rows() {
        assert_eq!(a.predict(q), b.predict(q));
    }
}

#[test]
fn evaluation_is_reproducible() {
    let (x, y) = blobs(4, 25, 8, 4.0, 11);
    for spec in [
        ClassifierSpec::Knn {
            k: 5,
            distance: Distance::Euclidean,
        },
        ClassifierSpec::RandomForest(ForestConfig {
            trees: 10,
            ..ForestConfig::default()
        }),
        ClassifierSpec::LinearSvm(SvmConfig::default()),
    ] {
        let a = evaluate_representation("blobs", &x, &y, &spec, 3, 0.2, 4).unwrap();
        let b = evaluate_representation("blobs", &x, &y, &spec, 3, 0.2, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.run_accuracy.len(), 3);
        assert!(a.metric("accuracy").unwrap().mean > 0.8, "{}", spec.name());
    }
    let one = evaluate_representation(
        "blobs",
        &x,
        &y,
        &ClassifierSpec::Knn {
            k: 1,
            distance: Distance::Cosine,
        },
        1,
        0.2,
        4,
    )
    .unwrap();
    assert!(one.metrics.iter().all(|m| m.stddev == 0.0));
}
