//! The four explainer families dispatched by the delegate stage, plus exact
//! Shapley enumeration used as their oracle.

mod counterfactual;
mod protodash;
mod rules;
mod shap;
mod table;

use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use counterfactual::{genetic_cf, CounterfactualConfig};
pub use protodash::{median_heuristic_width, protodash, rbf, zscore_rows, ProtodashConfig, ProtodashProblem};
pub use rules::{apply_rules, extract_rules, rules_from_tree, Condition, Interval, Rule, RuleConfig};
pub use shap::{exact_shapley, kernel_shap, ShapConfig, EXACT_MAX_FEATURES};
pub use table::{OutputSidecar, TableError};

use crate::models::ModelError;
use crate::registry::Modality;

#[derive(Debug, Error)]
pub enum ExplainerError {
    #[error("background rows are all identical to the instance")]
    DegenerateBackground,
    #[error("weighted least-squares system is singular")]
    SingularSystem,
    #[error("exact enumeration supports at most {max} features, got {got}")]
    TooManyFeatures { got: usize, max: usize },
    #[error("source dataset is empty")]
    EmptySource,
    #[error("kernel width must be positive, got {0}")]
    NonPositiveWidth(f64),
    #[error("invalid count: {0}")]
    InvalidCount(String),
    #[error("no valid counterfactual found within the search budget")]
    NoValidCounterfactual,
    #[error("no rule covers the row")]
    NoCoveringRule,
    #[error("input is empty")]
    EmptyInput,
    #[error("row has {got} values, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const KERNEL_SHAP: &str = "KernelShap";
pub const EXACT_SHAPLEY: &str = "ExactShapley";
pub const PROTODASH: &str = "Protodash";
pub const GENETIC_CF: &str = "GeneticCF";
pub const SURROGATE_RULES: &str = "SurrogateRules";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub features: Vec<String>,
    pub attributions: Vec<f64>,
    /// Prediction on the mean-imputed row.
    pub base_value: f64,
    pub prediction: f64,
}

impl FeatureAttribution {
    /// Feature indices by decreasing |attribution|, ties by index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.attributions.len()).collect();
        order.sort_by(|&a, &b| self.attributions[b].abs().total_cmp(&self.attributions[a].abs()).then(a.cmp(&b)));
        order
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRow {
    pub row_id: Option<u64>,
    pub values: Vec<f64>,
    pub weight: f64,
    pub prediction: Option<f64>,
    /// Set when the instance already had the desired class and is returned
    /// unchanged.
    #[serde(default)]
    pub zero_change: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSet {
    pub features: Vec<String>,
    pub rows: Vec<SampleRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSet {
    pub features: Vec<String>,
    pub labels: Vec<String>,
    pub rules: Vec<Rule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "modality")]
pub enum Payload {
    Features(FeatureAttribution),
    Samples(SampleSet),
    Rules(RuleSet),
}

impl Payload {
    pub fn modality(&self) -> Modality {
        match self {
            Payload::Features(_) => Modality::Features,
            Payload::Samples(_) => Modality::Samples,
            Payload::Rules(_) => Modality::Rules,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerOutput {
    pub explainer_id: String,
    pub modality: Modality,
    pub payload: Payload,
    /// The explained row, for local explainers.
    pub instance: Option<Vec<f64>>,
    pub seed: u64,
    pub runtime_ms: u64,
    /// Configuration the explainer ran with.
    pub config: serde_json::Value,
    /// Scalar by-products such as the fitted objective or kernel width.
    pub diagnostics: BTreeMap<String, f64>,
}

impl ExplainerOutput {
    pub(crate) fn new(
        explainer_id: &str,
        payload: Payload,
        instance: Option<Vec<f64>>,
        seed: u64,
        started: Instant,
        config: serde_json::Value,
    ) -> Self {
        ExplainerOutput {
            explainer_id: explainer_id.to_string(),
            modality: payload.modality(),
            payload,
            instance,
            seed,
            runtime_ms: started.elapsed().as_millis() as u64,
            config,
            diagnostics: BTreeMap::new(),
        }
    }

    pub fn attributions(&self) -> Option<&FeatureAttribution> {
        match &self.payload {
            Payload::Features(a) => Some(a),
            _ => None,
        }
    }

    pub fn samples(&self) -> Option<&SampleSet> {
        match &self.payload {
            Payload::Samples(s) => Some(s),
            _ => None,
        }
    }

    pub fn rules(&self) -> Option<&RuleSet> {
        match &self.payload {
            Payload::Rules(r) => Some(r),
            _ => None,
        }
    }
}

pub(crate) fn check_dim(expected: usize, row: &[f64]) -> Result<(), ExplainerError> {
    if row.len() != expected {
        return Err(ExplainerError::DimensionMismatch { expected, got: row.len() });
    }
    Ok(())
}
