//! Interval rules read off the paths of a surrogate decision tree.

use std::fmt;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{ExplainerError, ExplainerOutput, Payload, RuleSet, SURROGATE_RULES};
use crate::ingest::Dataset;
use crate::models::{fit_tree, DecisionTree, Predictor, TreeConfig, TreeNode};

/// Half-open interval `(low, high]`; a missing bound is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub low: Option<f64>,
    pub high: Option<f64>,
}

impl Interval {
    pub const ALL: Interval = Interval { low: None, high: None };

    pub fn contains(&self, x: f64) -> bool {
        self.low.is_none_or(|l| x > l) && self.high.is_none_or(|h| x <= h)
    }

    pub fn is_empty(&self) -> bool {
        matches!((self.low, self.high), (Some(l), Some(h)) if l >= h)
    }

    pub fn is_unbounded(&self) -> bool {
        self.low.is_none() && self.high.is_none()
    }

    fn clip_high(&mut self, t: f64) {
        self.high = Some(self.high.map_or(t, |h| h.min(t)));
    }

    fn clip_low(&mut self, t: f64) {
        self.low = Some(self.low.map_or(t, |l| l.max(t)));
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.low {
            Some(l) => write!(f, "({l}, ")?,
            None => write!(f, "(-inf, ")?,
        }
        match self.high {
            Some(h) => write!(f, "{h}]"),
            None => write!(f, "inf)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub feature: String,
    pub index: usize,
    pub interval: Interval,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in {}", self.feature, self.interval)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub conditions: Vec<Condition>,
    pub label: u8,
    /// Fraction of training rows satisfying the antecedent.
    pub coverage: f64,
    /// Fraction of covered rows the model assigns `label`.
    pub precision: f64,
}

impl Rule {
    pub fn covers(&self, row: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.interval.contains(row[c.index]))
    }

    pub fn len(&self) -> usize {
        self.conditions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.conditions.is_empty()
    }

    /// Conditions joined by `AND`, or `TRUE` when there are none.
    pub fn antecedent(&self) -> String {
        if self.conditions.is_empty() {
            return "TRUE".into();
        }
        self.conditions.iter().map(Condition::to_string).collect::<Vec<_>>().join(" AND ")
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "IF {} THEN {}", self.antecedent(), self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RuleConfig {
    pub surrogate_depth: Option<usize>,
    pub min_leaf: usize,
}

impl Default for RuleConfig {
    fn default() -> Self {
        RuleConfig { surrogate_depth: Some(3), min_leaf: 10 }
    }
}

/// One rule per root-to-leaf path. Conditions on the same feature merge into
/// one interval and are listed in feature order. Coverage and precision are
/// measured on `rows` against `predicted` classes.
pub fn rules_from_tree(tree: &DecisionTree, feature_names: &[String], rows: &[Vec<f64>], predicted: &[u8]) -> Vec<Rule> {
    let mut paths: Vec<(Vec<Interval>, u8)> = Vec::new();
    let mut stack = vec![(0usize, vec![Interval::ALL; tree.n_features])];
    while let Some((node, bounds)) = stack.pop() {
        match &tree.nodes[node] {
            TreeNode::Leaf { probability, .. } => paths.push((bounds, u8::from(*probability >= 0.5))),
            TreeNode::Split { feature, threshold, left, right, .. } => {
                let mut r = bounds.clone();
                r[*feature].clip_low(*threshold);
                stack.push((*right, r));
                let mut l = bounds;
                l[*feature].clip_high(*threshold);
                stack.push((*left, l));
            }
        }
    }
    let n = rows.len().max(1) as f64;
    paths
        .into_iter()
        .map(|(bounds, label)| {
            let conditions: Vec<Condition> = bounds
                .iter()
                .enumerate()
                .filter(|(_, iv)| !iv.is_unbounded())
                .map(|(index, iv)| Condition { feature: feature_names[index].clone(), index, interval: *iv })
                .collect();
            let mut rule = Rule { conditions, label, coverage: 0.0, precision: 0.0 };
            let covered: Vec<usize> = (0..rows.len()).filter(|&i| rule.covers(&rows[i])).collect();
            rule.coverage = covered.len() as f64 / n;
            if !covered.is_empty() {
                rule.precision =
                    covered.iter().filter(|&&i| predicted[i] == label).count() as f64 / covered.len() as f64;
            }
            rule
        })
        .collect()
}

/// Fits a surrogate tree on the model's predicted classes over `train` and
/// returns its path rules.
pub fn extract_rules<P: Predictor + ?Sized>(
    model: &P,
    train: &Dataset,
    config: &RuleConfig,
) -> Result<ExplainerOutput, ExplainerError> {
    let started = Instant::now();
    if train.is_empty() {
        return Err(ExplainerError::EmptyInput);
    }
    if config.min_leaf == 0 {
        return Err(ExplainerError::InvalidCount("min_leaf must be at least 1".into()));
    }
    let predicted: Vec<u8> = train.rows.iter().map(|r| model.predict_class(r)).collect();
    let tree_cfg = TreeConfig { max_depth: config.surrogate_depth, min_leaf: config.min_leaf };
    let tree = fit_tree(&train.rows, &predicted, train.n_features(), &tree_cfg);
    let rules = rules_from_tree(&tree, &train.schema.feature_names, &train.rows, &predicted);
    let agree = train.rows.iter().zip(&predicted).filter(|(r, p)| tree.predict_class(r) == **p).count();

    let cfg = serde_json::json!({
        "surrogate": "cart_gini",
        "surrogate_depth": config.surrogate_depth,
        "min_leaf": config.min_leaf,
        "targets": "model_predicted_class",
        "interval_convention": "(low, high]",
    });
    let payload = Payload::Rules(RuleSet {
        features: train.schema.feature_names.clone(),
        labels: train.schema.outcome_labels.clone(),
        rules,
    });
    let mut out = ExplainerOutput::new(SURROGATE_RULES, payload, None, 0, started, cfg);
    out.diagnostics.insert("surrogate_depth".into(), tree.depth() as f64);
    out.diagnostics.insert("train_agreement".into(), agree as f64 / train.len() as f64);
    Ok(out)
}

/// Label of the rule covering `row`.
pub fn apply_rules(rules: &[Rule], row: &[f64]) -> Result<u8, ExplainerError> {
    rules.iter().find(|r| r.covers(row)).map(|r| r.label).ok_or(ExplainerError::NoCoveringRule)
}
