//! Logistic regression, CART decision trees and random forests, plus the
//! weighted-average evaluation used for model selection.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::Dataset;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("training set contains a single class")]
    SingleClassTrainingSet,
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("row has {got} values, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("evaluation set is empty")]
    EmptyTestSet,
    #[error("no candidate models given")]
    NoCandidates,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("model document: {0}")]
    Serialization(String),
}

/// Anything that maps a feature row to a score. Classifiers return the
/// positive-class probability; test fixtures may return arbitrary reals.
pub trait Predictor: Sync {
    fn n_features(&self) -> usize;

    /// Score for a row of length `n_features()`. Callers guarantee the length.
    fn predict(&self, row: &[f64]) -> f64;

    fn predict_class(&self, row: &[f64]) -> u8 {
        u8::from(self.predict(row) >= 0.5)
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn n_features(&self) -> usize {
        (**self).n_features()
    }
    fn predict(&self, row: &[f64]) -> f64 {
        (**self).predict(row)
    }
}

/// Wraps a closure as a [`Predictor`].
pub struct FnModel<F> {
    n: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnModel<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        FnModel { n: n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnModel<F> {
    fn n_features(&self) -> usize {
        self.n
    }
    fn predict(&self, row: &[f64]) -> f64 {
        (self.f)(row)
    }
}

/// `bias + Σ wᵢ xᵢ`, unsquashed.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearScore {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl Predictor for LinearScore {
    fn n_features(&self) -> usize {
        self.weights.len()
    }
    fn predict(&self, row: &[f64]) -> f64 {
        self.bias + dot(&self.weights, row)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    LogisticRegression,
    DecisionTree,
    RandomForest,
}

impl ModelKind {
    /// Tie-break rank for selection: lower wins.
    fn preference(self) -> u8 {
        match self {
            ModelKind::LogisticRegression => 0,
            ModelKind::RandomForest => 1,
            ModelKind::DecisionTree => 2,
        }
    }

    pub fn short(self) -> &'static str {
        match self {
            ModelKind::LogisticRegression => "lr",
            ModelKind::DecisionTree => "dt",
            ModelKind::RandomForest => "rf",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ModelKind::LogisticRegression => "Logistic Regression",
            ModelKind::DecisionTree => "Decision Tree",
            ModelKind::RandomForest => "Random Forest",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Logistic regression

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LogisticConfig {
    /// L2 penalty on the weights (bias unpenalized).
    pub lambda: f64,
    pub iterations: usize,
    pub learning_rate: f64,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        LogisticConfig {
            lambda: 1.0,
            iterations: 500,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticParams {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl LogisticParams {
    /// Standardized row; features with zero spread map to 0.
    pub fn standardize(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| if *s > 0.0 { (x - m) / s } else { 0.0 })
            .collect()
    }

    pub fn logit(&self, row: &[f64]) -> f64 {
        self.bias + dot(&self.weights, &self.standardize(row))
    }
}

/// Penalized mean log-loss `(1/n) Σ ℓᵢ + λ/(2n) ‖w‖²` and its gradient
/// with respect to (weights, bias), on already standardized rows.
pub fn logistic_loss_and_grad(
    weights: &[f64],
    bias: f64,
    z: &[Vec<f64>],
    y: &[u8],
    lambda: f64,
) -> (f64, Vec<f64>, f64) {
    let n = z.len() as f64;
    let mut loss = 0.0;
    let mut gw = vec![0.0; weights.len()];
    let mut gb = 0.0;
    for (row, &label) in z.iter().zip(y) {
        let t = bias + dot(weights, row);
        let p = sigmoid(t);
        let yf = f64::from(label);
        // log(1 + e^t) - y t, computed stably
        loss += t.max(0.0) + (-t.abs()).exp().ln_1p() - yf * t;
        let r = p - yf;
        for (g, x) in gw.iter_mut().zip(row) {
            *g += r * x;
        }
        gb += r;
    }
    let reg: f64 = weights.iter().map(|w| w * w).sum();
    loss = loss / n + lambda * reg / (2.0 * n);
    for (g, w) in gw.iter_mut().zip(weights) {
        *g = *g / n + lambda * w / n;
    }
    (loss, gw, gb / n)
}

pub fn train_logistic(train: &Dataset, config: &LogisticConfig) -> Result<TrainedModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if !train.outcomes.contains(&0) || !train.outcomes.contains(&1) {
        return Err(ModelError::SingleClassTrainingSet);
    }
    let means = train.feature_means();
    let stds: Vec<f64> = train
        .feature_stds()
        .into_iter()
        .map(|s| if s > 1e-12 { s } else { 0.0 })
        .collect();
    let mut params = LogisticParams {
        weights: vec![0.0; train.n_features()],
        bias: 0.0,
        means,
        stds,
    };
    let z: Vec<Vec<f64>> = train.rows.iter().map(|r| params.standardize(r)).collect();
    for it in 0..config.iterations {
        let (loss, gw, gb) =
            logistic_loss_and_grad(&params.weights, params.bias, &z, &train.outcomes, config.lambda);
        if !loss.is_finite() {
            return Err(ModelError::NonFiniteLoss(it));
        }
        for (j, (w, g)) in params.weights.iter_mut().zip(&gw).enumerate() {
            if params.stds[j] > 0.0 {
                *w -= config.learning_rate * g;
            }
        }
        params.bias -= config.learning_rate * gb;
    }
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::LogisticRegression,
        params: ModelParams::Logistic(params),
        train_config: TrainConfig::Logistic(config.clone()),
        feature_order: train.schema.feature_names.clone(),
        seed: None,
    })
}

// ---------------------------------------------------------------------------
// CART

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeConfig {
    /// `None` grows until leaves are pure or too small to split.
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for TreeConfig {
    fn default() -> Self {
        TreeConfig {
            max_depth: Some(5),
            min_leaf: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        samples: usize,
    },
    Leaf {
        probability: f64,
        samples: usize,
    },
}

/// Binary tree stored as an arena; node 0 is the root. Rows with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

impl DecisionTree {
    pub fn leaf_index(&self, row: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn probability(&self, row: &[f64]) -> f64 {
        match self.nodes[self.leaf_index(row)] {
            TreeNode::Leaf { probability, .. } => probability,
            TreeNode::Split { .. } => unreachable!("leaf_index stops at leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match t.nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }
}

impl Predictor for DecisionTree {
    fn n_features(&self) -> usize {
        self.n_features
    }
    fn predict(&self, row: &[f64]) -> f64 {
        self.probability(row)
    }
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct TreeBuilder<'a> {
    rows: &'a [Vec<f64>],
    labels: &'a [u8],
    config: &'a TreeConfig,
    n_features: usize,
    /// Per-split random feature subset: (rng, subset size).
    sampler: Option<(&'a mut ChaCha8Rng, usize)>,
    nodes: Vec<TreeNode>,
}

impl TreeBuilder<'_> {
    fn candidate_features(&mut self) -> Vec<usize> {
        match self.sampler.as_mut() {
            Some((rng, k)) if *k < self.n_features => {
                let mut f = sample(*rng, self.n_features, *k).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..self.n_features).collect(),
        }
    }

    /// Best (feature, threshold, weighted child impurity) with deterministic
    /// tie-break on lowest feature index, then lowest threshold.
    fn best_split(&mut self, idx: &[usize]) -> Option<(usize, f64, f64)> {
        let n = idx.len();
        let min_leaf = self.config.min_leaf.max(1);
        if n < 2 * min_leaf {
            return None;
        }
        let pos_total = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        let parent = gini(pos_total, n);
        if parent == 0.0 {
            return None;
        }
        let mut best: Option<(usize, f64, f64)> = None;
        let mut order = idx.to_vec();
        for f in self.candidate_features() {
            order.sort_by(|&a, &b| self.rows[a][f].total_cmp(&self.rows[b][f]));
            let mut pos_left = 0;
            for k in 0..n - 1 {
                pos_left += usize::from(self.labels[order[k]] == 1);
                let (lo, hi) = (self.rows[order[k]][f], self.rows[order[k + 1]][f]);
                if lo >= hi {
                    continue;
                }
                let n_left = k + 1;
                let n_right = n - n_left;
                if n_left < min_leaf || n_right < min_leaf {
                    continue;
                }
                let threshold = lo + (hi - lo) / 2.0;
                let score = (n_left as f64 * gini(pos_left, n_left)
                    + n_right as f64 * gini(pos_total - pos_left, n_right))
                    / n as f64;
                let better = match best {
                    None => true,
                    Some((_, _, s)) => score < s - 1e-12,
                };
                if better {
                    best = Some((f, threshold, score));
                }
            }
        }
        best.filter(|(_, _, s)| parent - s > 1e-12)
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.labels[i] == 1).count();
        self.nodes.push(TreeNode::Leaf {
            probability: if n == 0 { 0.0 } else { pos as f64 / n as f64 },
            samples: n,
        });
        if self.config.max_depth.is_some_and(|d| depth >= d) {
            return id;
        }
        if let Some((feature, threshold, _)) = self.best_split(&idx) {
            let (l, r): (Vec<usize>, Vec<usize>) =
                idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
            let left = self.grow(l, depth + 1);
            let right = self.grow(r, depth + 1);
            self.nodes[id] = TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                samples: n,
            };
        }
        id
    }
}

/// Fits a CART classifier (Gini impurity) on raw rows and 0/1 labels.
pub fn fit_tree(rows: &[Vec<f64>], labels: &[u8], n_features: usize, config: &TreeConfig) -> DecisionTree {
    build_tree(rows, labels, n_features, config, None)
}

fn build_tree(
    rows: &[Vec<f64>],
    labels: &[u8],
    n_features: usize,
    config: &TreeConfig,
    sampler: Option<(&mut ChaCha8Rng, usize)>,
) -> DecisionTree {
    let mut b = TreeBuilder {
        rows,
        labels,
        config,
        n_features,
        sampler,
        nodes: Vec::new(),
    };
    b.grow((0..rows.len()).collect(), 0);
    DecisionTree {
        nodes: b.nodes,
        n_features,
    }
}

pub fn train_tree(train: &Dataset, config: &TreeConfig) -> Result<TrainedModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if config.min_leaf == 0 {
        return Err(ModelError::InvalidConfig("min_leaf must be at least 1".into()));
    }
    let tree = fit_tree(&train.rows, &train.outcomes, train.n_features(), config);
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::DecisionTree,
        params: ModelParams::Tree(tree),
        train_config: TrainConfig::Tree(config.clone()),
        feature_order: train.schema.feature_names.clone(),
        seed: None,
    })
}

// ---------------------------------------------------------------------------
// Random forest

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSubset {
    /// ⌈√M⌉ features per split.
    Sqrt,
    All,
    Count(usize),
}

impl FeatureSubset {
    pub fn size(self, m: usize) -> usize {
        match self {
            FeatureSubset::Sqrt => ((m as f64).sqrt().ceil() as usize).clamp(1, m),
            FeatureSubset::All => m,
            FeatureSubset::Count(k) => k.clamp(1, m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub feature_subset: FeatureSubset,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: Some(6),
            min_leaf: 1,
            feature_subset: FeatureSubset::Sqrt,
            bootstrap: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub trees: Vec<DecisionTree>,
    pub tree_seeds: Vec<u64>,
}

pub fn train_forest(train: &Dataset, config: &ForestConfig) -> Result<TrainedModel, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    if config.n_trees == 0 {
        return Err(ModelError::InvalidConfig("n_trees must be at least 1".into()));
    }
    let m = train.n_features();
    let tree_cfg = TreeConfig {
        max_depth: config.max_depth,
        min_leaf: config.min_leaf.max(1),
    };
    let subset = config.feature_subset.size(m);
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trees = Vec::with_capacity(config.n_trees);
    let mut tree_seeds = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, labels): (Vec<Vec<f64>>, Vec<u8>) = if config.bootstrap {
            (0..train.len())
                .map(|_| {
                    let i = rng.random_range(0..train.len());
                    (train.rows[i].clone(), train.outcomes[i])
                })
                .unzip()
        } else {
            (train.rows.clone(), train.outcomes.clone())
        };
        trees.push(build_tree(&rows, &labels, m, &tree_cfg, Some((&mut rng, subset))));
        tree_seeds.push(seed);
    }
    Ok(TrainedModel {
        format_version: MODEL_FORMAT_VERSION,
        kind: ModelKind::RandomForest,
        params: ModelParams::Forest(ForestParams { trees, tree_seeds }),
        train_config: TrainConfig::Forest(config.clone()),
        feature_order: train.schema.feature_names.clone(),
        seed: Some(config.seed),
    })
}

// ---------------------------------------------------------------------------
// Trained model document

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelParams {
    Logistic(LogisticParams),
    Tree(DecisionTree),
    Forest(ForestParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TrainConfig {
    Logistic(LogisticConfig),
    Tree(TreeConfig),
    Forest(ForestConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub params: ModelParams,
    pub train_config: TrainConfig,
    pub feature_order: Vec<String>,
    pub seed: Option<u64>,
}

impl TrainedModel {
    pub fn predict_proba(&self, row: &[f64]) -> Result<f64, ModelError> {
        if row.len() != self.feature_order.len() {
            return Err(ModelError::DimensionMismatch {
                expected: self.feature_order.len(),
                got: row.len(),
            });
        }
        Ok(self.predict(row))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: TrainedModel =
            serde_json::from_str(text).map_err(|e| ModelError::Serialization(e.to_string()))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(ModelError::Serialization(format!(
                "unsupported format version {}",
                m.format_version
            )));
        }
        Ok(m)
    }
}

impl Predictor for TrainedModel {
    fn n_features(&self) -> usize {
        self.feature_order.len()
    }

    fn predict(&self, row: &[f64]) -> f64 {
        match &self.params {
            ModelParams::Logistic(p) => sigmoid(p.logit(row)),
            ModelParams::Tree(t) => t.probability(row),
            ModelParams::Forest(f) => {
                f.trees.iter().map(|t| t.probability(row)).sum::<f64>() / f.trees.len() as f64
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMetrics {
    /// Support-weighted averages over the two classes.
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub accuracy: f64,
    /// `[[tn, fp], [fn, tp]]`, rows = actual class.
    pub confusion: [[usize; 2]; 2],
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn metrics_from_labels(actual: &[u8], predicted: &[u8]) -> Result<ModelMetrics, ModelError> {
    if actual.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let mut c = [[0usize; 2]; 2];
    for (&a, &p) in actual.iter().zip(predicted) {
        c[a as usize][p as usize] += 1;
    }
    let n = actual.len() as f64;
    let mut precision = 0.0;
    let mut recall = 0.0;
    let mut f1 = 0.0;
    for k in 0..2 {
        let tp = c[k][k];
        let support = c[k][0] + c[k][1];
        let predicted_k = c[0][k] + c[1][k];
        let p = ratio(tp, predicted_k);
        let r = ratio(tp, support);
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        let w = support as f64 / n;
        precision += w * p;
        recall += w * r;
        f1 += w * f;
    }
    Ok(ModelMetrics {
        precision,
        recall,
        f1,
        sensitivity: ratio(c[1][1], c[1][0] + c[1][1]),
        specificity: ratio(c[0][0], c[0][0] + c[0][1]),
        accuracy: ratio(c[0][0] + c[1][1], actual.len()),
        confusion: c,
    })
}

pub fn evaluate<P: Predictor + ?Sized>(model: &P, test: &Dataset) -> Result<ModelMetrics, ModelError> {
    if test.is_empty() {
        return Err(ModelError::EmptyTestSet);
    }
    let predicted: Vec<u8> = test.rows.iter().map(|r| model.predict_class(r)).collect();
    metrics_from_labels(&test.outcomes, &predicted)
}

/// Highest F1 wins; ties go to LR, then RF, then DT.
pub fn select_best(candidates: &[(TrainedModel, ModelMetrics)]) -> Result<&TrainedModel, ModelError> {
    candidates
        .iter()
        .max_by(|(ma, a), (mb, b)| {
            a.f1.total_cmp(&b.f1)
                .then(mb.kind.preference().cmp(&ma.kind.preference()))
        })
        .map(|(m, _)| m)
        .ok_or(ModelError::NoCandidates)
}

/// Seeded RNG helper shared by the stochastic components.
#[allow(dead_code)]
pub(crate) fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
