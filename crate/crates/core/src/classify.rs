//! Downstream evaluation of document vectors: k-nearest neighbours, a
//! random forest of CART trees, a one-vs-rest linear SVM, and
//! confusion-matrix metrics aggregated over repeated stratified splits.

use std::cmp::Ordering;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::stratified_holdout;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{cosine, squared_euclidean, Scalar};

fn check_training<T: Scalar>(x: &Matrix<T>, labels: &[usize]) -> Result<()> {
    if x.rows() == 0 {
        return Err(Error::EmptyCorpus);
    }
    if x.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} vectors but {} labels",
            x.rows(),
            labels.len()
        )));
    }
    Ok(())
}

fn check_query<T: Scalar>(x: &Matrix<T>, query: &[T]) -> Result<()> {
    if query.len() != x.cols() {
        return Err(Error::Shape(format!(
            "query has {} dimensions, training vectors {}",
            query.len(),
            x.cols()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Distance {
    #[default]
    Euclidean,
    /// `1 − cosine similarity`.
    Cosine,
}

impl Distance {
    fn between<T: Scalar>(self, a: &[T], b: &[T]) -> f64 {
        match self {
            Distance::Euclidean => squared_euclidean(a, b).as_f64().sqrt(),
            Distance::Cosine => 1.0 - cosine(a, b).as_f64(),
        }
    }
}

/// Majority label among the `k` nearest training vectors. Distance ties go
/// to the lower training index; vote ties to the label whose voters have the
/// smaller summed distance, then to the lower label id.
pub fn knn_predict<T: Scalar>(
    train: &Matrix<T>,
    labels: &[usize],
    query: &[T],
    k: usize,
    distance: Distance,
) -> Result<usize> {
    check_training(train, labels)?;
    check_query(train, query)?;
    if k == 0 || k > train.rows() {
        return Err(Error::Config(format!("k = {k} must be in 1..={}", train.rows())));
    }
    let mut dist: Vec<(f64, usize)> = train
        .iter_rows()
        .enumerate()
        .map(|(i, row)| (distance.between(row, query), i))
        .collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by);
        dist.truncate(k);
    }
    dist.sort_by(by);
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![(0usize, 0.0f64); classes];
    for &(d, i) in &dist {
        votes[labels[i]].0 += 1;
        votes[labels[i]].1 += d;
    }
    Ok(votes
        .iter()
        .enumerate()
        .filter(|(_, v)| v.0 > 0)
        .min_by(|(la, a), (lb, b)| b.0.cmp(&a.0).then(a.1.total_cmp(&b.1)).then(la.cmp(lb)))
        .map(|(l, _)| l)
        .expect("k >= 1 gives at least one vote"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub trees: usize,
    /// Features considered per split; `None` means ⌊√dim⌋.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    /// Nodes with fewer samples become leaves.
    pub min_samples_split: usize,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            trees: 100,
            max_features: None,
            bootstrap: true,
            min_samples_split: 2,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node<T> {
    Leaf(usize),
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
}

/// A CART tree; samples with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn predict(&self, query: &[T]) -> usize {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(label) => return *label,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if query[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

/// Most frequent label, ties to the lower id.
fn majority(counts: &[usize]) -> usize {
    counts
        .iter()
        .enumerate()
        .max_by(|(la, a), (lb, b)| a.cmp(b).then(lb.cmp(la)))
        .map_or(0, |(l, _)| l)
}

/// `n·Gini = n − Σ c²/n`.
fn weighted_gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let sq: f64 = counts.iter().map(|&c| (c * c) as f64).sum();
    n as f64 - sq / n as f64
}

struct TreeBuilder<'a, T> {
    x: &'a Matrix<T>,
    y: &'a [usize],
    classes: usize,
    max_features: usize,
    min_samples_split: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> TreeBuilder<'_, T> {
    fn grow<R: Rng>(&mut self, idx: &mut [usize], rng: &mut R) -> usize {
        let mut counts = vec![0usize; self.classes];
        for &i in idx.iter() {
            counts[self.y[i]] += 1;
        }
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(majority(&counts)));
        let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
        if pure || idx.len() < self.min_samples_split {
            return id;
        }
        let Some((feature, threshold)) = self.best_split(idx, &counts, rng) else {
            return id;
        };
        let mut split = 0;
        for j in 0..idx.len() {
            if self.x.get(idx[j], feature) <= threshold {
                idx.swap(split, j);
                split += 1;
            }
        }
        let (l, r) = idx.split_at_mut(split);
        let left = self.grow(l, rng);
        let right = self.grow(r, rng);
        self.nodes[id] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        id
    }

    /// Lowest weighted Gini over `max_features` random features; further
    /// features are tried only while none of the drawn ones can split.
    fn best_split<R: Rng>(&self, idx: &[usize], counts: &[usize], rng: &mut R) -> Option<(usize, T)> {
        let mut features: Vec<usize> = (0..self.x.cols()).collect();
        features.shuffle(rng);
        let n = idx.len();
        let mut best: Option<(f64, usize, T)> = None;
        let mut column: Vec<(T, usize)> = Vec::with_capacity(n);
        for (tried, &f) in features.iter().enumerate() {
            if tried >= self.max_features && best.is_some() {
                break;
            }
            column.clear();
            column.extend(idx.iter().map(|&i| (self.x.get(i, f), self.y[i])));
            column.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
            let mut left = vec![0usize; self.classes];
            let mut right = counts.to_vec();
            for j in 0..n - 1 {
                left[column[j].1] += 1;
                right[column[j].1] -= 1;
                if !(column[j].0 < column[j + 1].0) {
                    continue;
                }
                let score = weighted_gini(&left, j + 1) + weighted_gini(&right, n - j - 1);
                if best.as_ref().is_none_or(|b| score < b.0) {
                    let (a, b) = (column[j].0, column[j + 1].0);
                    let mid = (a + b) / T::of(2.0);
                    let threshold = if mid < b { mid } else { a };
                    best = Some((score, f, threshold));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn fit_tree<T: Scalar>(
    x: &Matrix<T>,
    y: &[usize],
    classes: usize,
    mut idx: Vec<usize>,
    config: &ForestConfig,
    rng: &mut ChaCha8Rng,
) -> DecisionTree<T> {
    let dim = x.cols();
    let max_features = config
        .max_features
        .unwrap_or(((dim as f64).sqrt().floor() as usize).max(1))
        .clamp(1, dim.max(1));
    let mut b = TreeBuilder {
        x,
        y,
        classes,
        max_features,
        min_samples_split: config.min_samples_split.max(2),
        nodes: Vec::new(),
    };
    b.grow(&mut idx, rng);
    DecisionTree { nodes: b.nodes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest<T> {
    trees: Vec<DecisionTree<T>>,
    classes: usize,
}

impl<T: Scalar> RandomForest<T> {
    pub fn trees(&self) -> &[DecisionTree<T>] {
        &self.trees
    }

    /// Majority vote over trees, ties to the lower label id.
    pub fn predict(&self, query: &[T]) -> usize {
        let mut votes = vec![0usize; self.classes];
        for t in &self.trees {
            votes[t.predict(query)] += 1;
        }
        majority(&votes)
    }
}

/// Trees are seeded independently from `config.seed`, so the forest does
/// not depend on how tree fitting is scheduled across threads.
pub fn train_random_forest<T: Scalar>(
    x: &Matrix<T>,
    labels: &[usize],
    config: &ForestConfig,
) -> Result<RandomForest<T>> {
    check_training(x, labels)?;
    if config.trees == 0 {
        return Err(Error::Config("a forest needs at least one tree".into()));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let n = x.rows();
    let trees = (0..config.trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(t as u64 + 1);
            let idx: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, labels, classes, idx, config, &mut rng)
        })
        .collect();
    Ok(RandomForest { trees, classes })
}

pub fn rf_predict<T: Scalar>(forest: &RandomForest<T>, query: &[T]) -> usize {
    forest.predict(query)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    /// Passes over the training set per one-vs-rest head.
    pub epochs: usize,
    /// L2 regularization strength λ.
    pub regularization: f64,
    /// Z-score features with training statistics before fitting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            regularization: 1e-4,
            standardize: true,
            seed: 1,
        }
    }
}

/// One-vs-rest linear SVM. Each head's weights carry a trailing bias
/// entry that is regularized like the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    /// classes × (dim + 1)
    weights: Matrix<f64>,
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl LinearSvm {
    pub fn classes(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix<f64> {
        &self.weights
    }

    fn features<T: Scalar>(&self, query: &[T], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            query
                .iter()
                .zip(self.mean.iter().zip(&self.scale))
                .map(|(&q, (&m, &s))| (q.as_f64() - m) / s),
        );
        out.push(1.0);
    }

    /// `w_c · x + b_c` for every class.
    pub fn decision_values<T: Scalar>(&self, query: &[T]) -> Vec<f64> {
        let mut x = Vec::with_capacity(query.len() + 1);
        self.features(query, &mut x);
        self.weights.iter_rows().map(|w| crate::scalar::dot(w, &x)).collect()
    }

    /// Argmax decision value, ties to the lower label id.
    pub fn predict<T: Scalar>(&self, query: &[T]) -> usize {
        let d = self.decision_values(query);
        let mut best = 0;
        for (c, &v) in d.iter().enumerate() {
            if v > d[best] {
                best = c;
            }
        }
        best
    }
}

/// Pegasos stochastic subgradient descent on the L2-regularized hinge loss,
/// one head per class. The returned weights average the iterates of the
/// final epoch.
pub fn train_linear_svm<T: Scalar>(x: &Matrix<T>, labels: &[usize], config: &SvmConfig) -> Result<LinearSvm> {
    check_training(x, labels)?;
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::Config("a linear SVM needs at least two classes".into()));
    }
    if !(config.regularization > 0.0) || config.epochs == 0 {
        return Err(Error::Config(
            "regularization must be positive and epochs at least 1".into(),
        ));
    }
    let (n, dim) = x.shape();
    let (mean, scale) = if config.standardize {
        let mean: Vec<f64> = (0..dim)
            .map(|j| x.iter_rows().map(|r| r[j].as_f64()).sum::<f64>() / n as f64)
            .collect();
        let scale = (0..dim)
            .map(|j| {
                let var = x.iter_rows().map(|r| (r[j].as_f64() - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        (mean, scale)
    } else {
        (vec![0.0; dim], vec![1.0; dim])
    };
    let mut svm = LinearSvm {
        weights: Matrix::zeros(classes, dim + 1),
        mean,
        scale,
    };
    let mut data = Matrix::zeros(n, dim + 1);
    let mut buf = Vec::new();
    for (i, row) in x.iter_rows().enumerate() {
        svm.features(row, &mut buf);
        data.row_mut(i).copy_from_slice(&buf);
    }
    let lambda = config.regularization;
    let heads: Vec<Vec<f64>> = (0..classes)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(c as u64 + 1);
            let mut w = vec![0.0; dim + 1];
            let mut avg = vec![0.0; dim + 1];
            let total = config.epochs * n;
            let avg_from = total - n;
            for t in 1..=total {
                let i = rng.random_range(0..n);
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let xi = data.row(i);
                let eta = 1.0 / (lambda * t as f64);
                let margin = y * crate::scalar::dot(&w, xi);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    crate::scalar::axpy(eta * y, xi, &mut w);
                }
                if t > avg_from {
                    crate::scalar::axpy(1.0 / n as f64, &w, &mut avg);
                }
            }
            avg
        })
        .collect();
    for (c, w) in heads.into_iter().enumerate() {
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("SVM head {c} diverged")));
        }
        svm.weights.row_mut(c).copy_from_slice(&w);
    }
    Ok(svm)
}

pub fn svm_predict<T: Scalar>(svm: &LinearSvm, query: &[T]) -> usize {
    svm.predict(query)
}

/// `counts[actual][predicted]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::Shape(format!("{} counts for {classes} classes", counts.len())));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_predictions(classes: usize, actual: &[usize], predicted: &[usize]) -> Result<Self> {
        if actual.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} actual labels, {} predictions",
                actual.len(),
                predicted.len()
            )));
        }
        let mut m = Self::new(classes);
        for (&a, &p) in actual.iter().zip(predicted) {
            if a >= classes || p >= classes {
                return Err(Error::Range(format!("label pair ({a}, {p}) outside {classes} classes")));
            }
            m.counts[a * classes + p] += 1;
        }
        Ok(m)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, actual: usize, predicted: usize) -> u64 {
        self.counts[actual * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    /// One-vs-rest counts for class `c`.
    pub fn class_counts(&self, c: usize) -> ClassCounts {
        let tp = self.get(c, c);
        let actual: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let predicted: u64 = (0..self.classes).map(|a| self.get(a, c)).sum();
        let fp = predicted - tp;
        let fn_ = actual - tp;
        ClassCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
    /// TP + FP = 0; precision reported as 0.
    pub precision_undefined: bool,
    /// TP + FN = 0; recall reported as 0.
    pub recall_undefined: bool,
    /// precision + recall = 0; F1 reported as 0.
    pub f1_undefined: bool,
}

impl ClassMetrics {
    pub fn from_counts(k: ClassCounts) -> Self {
        let ratio = |num: u64, den: u64| {
            if den == 0 {
                (0.0, true)
            } else {
                (num as f64 / den as f64, false)
            }
        };
        let total = k.tp + k.fp + k.fn_ + k.tn;
        let (accuracy, _) = ratio(k.tp + k.tn, total);
        let (recall, recall_undefined) = ratio(k.tp, k.tp + k.fn_);
        let (precision, precision_undefined) = ratio(k.tp, k.tp + k.fp);
        let f1_undefined = precision + recall == 0.0;
        let f1 = if f1_undefined {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            accuracy,
            recall,
            precision,
            f1,
            precision_undefined,
            recall_undefined,
            f1_undefined,
        }
    }
}

/// Per-class and averaged metrics of one confusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub counts: Vec<ClassCounts>,
    pub per_class: Vec<ClassMetrics>,
    pub macro_accuracy: f64,
    pub macro_recall: f64,
    pub macro_precision: f64,
    pub macro_f1: f64,
    /// Trace over total.
    pub micro_accuracy: f64,
}

impl Metrics {
    pub fn undefined_count(&self) -> usize {
        self.per_class
            .iter()
            .map(|m| m.precision_undefined as usize + m.recall_undefined as usize + m.f1_undefined as usize)
            .sum()
    }
}

pub fn compute_metrics(confusion: &ConfusionMatrix) -> Result<Metrics> {
    let total = confusion.total();
    if total == 0 || confusion.classes == 0 {
        return Err(Error::Domain("confusion matrix is empty".into()));
    }
    let counts: Vec<ClassCounts> = (0..confusion.classes).map(|c| confusion.class_counts(c)).collect();
    let per_class: Vec<ClassMetrics> = counts.iter().map(|&k| ClassMetrics::from_counts(k)).collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    Ok(Metrics {
        macro_accuracy: mean(|m| m.accuracy),
        macro_recall: mean(|m| m.recall),
        macro_precision: mean(|m| m.precision),
        macro_f1: mean(|m| m.f1),
        micro_accuracy: confusion.trace() as f64 / total as f64,
        counts,
        per_class,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ClassifierSpec {
    Knn {
        k: usize,
        #[serde(default)]
        distance: Distance,
    },
    RandomForest(ForestConfig),
    LinearSvm(SvmConfig),
}

impl ClassifierSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ClassifierSpec::Knn { .. } => "knn",
            ClassifierSpec::RandomForest(_) => "rf",
            ClassifierSpec::LinearSvm(_) => "svm",
        }
    }

    /// Fits on `train` and predicts every row of `test`. `seed` replaces
    /// the configured seed of stochastic classifiers.
    pub fn fit_predict<T: Scalar>(
        &self,
        train: &Matrix<T>,
        labels: &[usize],
        test: &Matrix<T>,
        seed: u64,
    ) -> Result<Vec<usize>> {
        match self {
            ClassifierSpec::Knn { k, distance } => test
                .iter_rows()
                .map(|q| knn_predict(train, labels, q, (*k).min(train.rows()), *distance))
                .collect(),
            ClassifierSpec::RandomForest(c) => {
                let forest = train_random_forest(train, labels, &ForestConfig { seed, ..c.clone() })?;
                Ok(test.iter_rows().map(|q| forest.predict(q)).collect())
            }
            ClassifierSpec::LinearSvm(c) => {
                let svm = train_linear_svm(train, labels, &SvmConfig { seed, ..c.clone() })?;
                Ok(test.iter_rows().map(|q| svm.predict(q)).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation across runs (0 for a single run).
    pub stddev: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: 0.0, stddev: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let stddev = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Self { mean, stddev }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: usize,
    pub accuracy: Summary,
    pub recall: Summary,
    pub precision: Summary,
    pub f1: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub representation: String,
    pub classifier: String,
    pub spec: ClassifierSpec,
    pub runs: usize,
    pub test_fraction: f64,
    pub seed: u64,
    /// Macro metrics plus `micro_accuracy`, each as mean and stddev.
    pub metrics: Vec<MetricRow>,
    pub per_class: Vec<ClassSummary>,
    /// Per-run macro accuracy, in run order.
    pub run_accuracy: Vec<f64>,
    /// Zero-denominator cases summed over runs and classes.
    pub undefined_metrics: usize,
    pub conventions: Vec<String>,
}

impl EvaluationReport {
    pub fn metric(&self, name: &str) -> Option<&MetricRow> {
        self.metrics.iter().find(|m| m.metric == name)
    }
}

pub const CONVENTIONS: [&str; 4] = [
    "accuracy, recall, precision and f1 are computed one-vs-rest per class and macro-averaged; micro_accuracy is trace/total",
    "precision with TP+FP=0, recall with TP+FN=0 and f1 with precision+recall=0 are reported as 0 and counted in undefined_metrics",
    "mean and stddev are taken across stratified train/test resamplings; stddev is the sample standard deviation",
    "knn distance ties go to the lower training index, vote ties to the smaller summed distance then the lower label id",
];

/// `runs` stratified train/test resamplings of the same vectors.
pub fn evaluate_representation<T: Scalar>(
    representation: &str,
    vectors: &Matrix<T>,
    labels: &[usize],
    spec: &ClassifierSpec,
    runs: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<EvaluationReport> {
    check_training(vectors, labels)?;
    if runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction {test_fraction} not in (0, 1)")));
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all = Vec::with_capacity(runs);
    for _ in 0..runs {
        let (train_idx, test_idx) = stratified_holdout(labels, test_fraction, &mut rng);
        if train_idx.is_empty() || test_idx.is_empty() {
            return Err(Error::Stratification(
                "every class needs at least two documents to hold one out".into(),
            ));
        }
        let gather = |idx: &[usize]| {
            let rows: Vec<Vec<T>> = idx.iter().map(|&i| vectors.row(i).to_vec()).collect();
            Matrix::from_rows(&rows)
        };
        let train = gather(&train_idx)?;
        let test = gather(&test_idx)?;
        let train_labels: Vec<usize> = train_idx.iter().map(|&i| labels[i]).collect();
        let actual: Vec<usize> = test_idx.iter().map(|&i| labels[i]).collect();
        let predicted = spec.fit_predict(&train, &train_labels, &test, rng.next_u64())?;
        all.push(compute_metrics(&ConfusionMatrix::from_predictions(
            classes, &actual, &predicted,
        )?)?);
    }
    let column = |f: &dyn Fn(&Metrics) -> f64| -> Vec<f64> { all.iter().map(f).collect() };
    let named: [(&str, Vec<f64>); 5] = [
        ("accuracy", column(&|m| m.macro_accuracy)),
        ("recall", column(&|m| m.macro_recall)),
        ("precision", column(&|m| m.macro_precision)),
        ("f1", column(&|m| m.macro_f1)),
        ("micro_accuracy", column(&|m| m.micro_accuracy)),
    ];
    let metrics = named
        .iter()
        .map(|(name, v)| {
            let s = Summary::of(v);
            MetricRow {
                metric: (*name).to_owned(),
                mean: s.mean,
                stddev: s.stddev,
            }
        })
        .collect();
    let per_class = (0..classes)
        .map(|c| ClassSummary {
            class: c,
            accuracy: Summary::of(&column(&|m| m.per_class[c].accuracy)),
            recall: Summary::of(&column(&|m| m.per_class[c].recall)),
            precision: Summary::of(&column(&|m| m.per_class[c].precision)),
            f1: Summary::of(&column(&|m| m.per_class[c].f1)),
        })
        .collect();
    Ok(EvaluationReport {
        representation: representation.to_owned(),
        classifier: spec.name().to_owned(),
        spec: spec.clone(),
        runs,
        test_fraction,
        seed,
        metrics,
        per_class,
        run_accuracy: named[0].1.clone(),
        undefined_metrics: all.iter().map(Metrics::undefined_count).sum(),
        conventions: CONVENTIONS.iter().map(|s| (*s).to_owned()).collect(),
    })
}

/// CSV with header `representation,classifier,metric,mean,stddev`.
pub fn write_report_csv<W: Write>(reports: &[EvaluationReport], mut w: W) -> std::io::Result<()> {
    writeln!(w, "representation,classifier,metric,mean,stddev")?;
    for r in reports {
        for m in &r.metrics {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.representation, r.classifier, m.metric, m.mean, m.stddev
            )?;
        }
    }
    Ok(())
}
