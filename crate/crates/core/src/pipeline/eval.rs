//! Stage-level evaluation reports.

use serde::{Deserialize, Serialize};

use super::{Pipeline, PipelineError};
use crate::decompose::{evaluate_parser, load_gold, ParsedFields, ParserReport, DEFAULT_LEVENSHTEIN_THRESHOLD};
use crate::explainers::{extract_rules, genetic_cf, kernel_shap, protodash, ExplainerOutput, ProtodashConfig};
use crate::metrics::{compute_metric, MetricReport};
use crate::models::ModelKind;
use crate::registry::{ExplanationType, MetricId, Modality};
use crate::synthesis::SynthesisScores;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalStage {
    Decompose,
    Delegate,
    Synthesis,
}

impl std::str::FromStr for EvalStage {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "decompose" => Ok(EvalStage::Decompose),
            "delegate" => Ok(EvalStage::Delegate),
            "synthesis" => Ok(EvalStage::Synthesis),
            other => Err(format!("unknown stage {other:?}; expected decompose, delegate or synthesis")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "stage", rename_all = "lowercase")]
pub enum StageReport {
    Decompose(ParserReport),
    Delegate(DelegateReport),
    Synthesis(SynthesisReport),
}

/// Published value for each delegate metric, kept for side-by-side display.
fn reference_value(metric: MetricId) -> f64 {
    match metric {
        MetricId::AvgRuleLength => 2.39,
        MetricId::Fidelity => 0.31,
        MetricId::NonRepresentativeness => 0.026,
        MetricId::Diversity => 340.96,
        MetricId::Faithfulness => 0.71,
        MetricId::Monotonicity => 0.095,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegateRow {
    pub metric: MetricId,
    /// Mean over instances; `None` when every instance failed.
    pub value: Option<f64>,
    pub modality: Modality,
    pub explanation_types: Vec<ExplanationType>,
    pub explainer_ids: Vec<String>,
    pub n_instances: usize,
    pub n_failed: usize,
    pub reference_value: f64,
    pub config_echo: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegateReport {
    pub model_kind: ModelKind,
    pub rows: Vec<DelegateRow>,
}

impl DelegateReport {
    pub fn row(&self, metric: MetricId) -> Option<&DelegateRow> {
        self.rows.iter().find(|r| r.metric == metric)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisRow {
    pub question: String,
    pub explanation_type: ExplanationType,
    /// Explainers ran and their outputs were handed to the renderer.
    pub reached_synthesis: bool,
    /// The type's template rendered without falling back.
    pub rendered: bool,
    pub scores: SynthesisScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSummary {
    pub answer_relevance: f64,
    pub faithfulness: f64,
    pub context_utilization: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub n_questions: usize,
    pub n_reached: usize,
    pub mean: SynthesisSummary,
    pub min: SynthesisSummary,
    /// LLM-judged scores from the original study. Different instrument, not
    /// comparable to the proxies above.
    pub reference_llm_judged: SynthesisSummary,
    pub method_note: String,
    pub rows: Vec<SynthesisRow>,
}

pub fn run_stage_eval(pipeline: &Pipeline, stage: EvalStage) -> Result<StageReport, PipelineError> {
    match stage {
        EvalStage::Decompose => decompose_eval(pipeline).map(StageReport::Decompose),
        EvalStage::Delegate => delegate_eval(pipeline).map(StageReport::Delegate),
        EvalStage::Synthesis => synthesis_eval(pipeline).map(StageReport::Synthesis),
    }
}

fn gold(pipeline: &Pipeline) -> Result<Vec<crate::decompose::GoldItem>, PipelineError> {
    let path = &pipeline.config.gold_path;
    if !path.is_file() {
        return Err(PipelineError::MissingFixture(format!("gold corpus {}", path.display())));
    }
    load_gold(path).map_err(|e| PipelineError::MissingFixture(e.to_string()))
}

fn decompose_eval(pipeline: &Pipeline) -> Result<ParserReport, PipelineError> {
    let items = gold(pipeline)?;
    let parser = pipeline.parser();
    Ok(evaluate_parser(
        &items,
        |q| parser.parse(q).map(|rq| ParsedFields::from(&rq)).unwrap_or_default(),
        DEFAULT_LEVENSHTEIN_THRESHOLD,
    )?)
}

/// Counterfactual searches folded into the sample-modality rows.
const CF_INSTANCES: usize = 20;

struct Accumulator {
    values: Vec<f64>,
    failed: usize,
    explainers: Vec<String>,
}

impl Accumulator {
    fn new() -> Self {
        Accumulator { values: Vec::new(), failed: 0, explainers: Vec::new() }
    }

    fn add(&mut self, explainer: &str, result: Result<MetricReport, impl std::fmt::Display>) {
        if !self.explainers.iter().any(|e| e == explainer) {
            self.explainers.push(explainer.to_string());
        }
        match result {
            Ok(r) => self.values.push(r.value),
            Err(_) => self.failed += 1,
        }
    }
}

/// Metric table over the logistic model: attributions for every test row,
/// surrogate rules judged on the test split, prototypes of the test split
/// and counterfactuals for the first test rows.
fn delegate_eval(pipeline: &Pipeline) -> Result<DelegateReport, PipelineError> {
    let model = pipeline
        .candidate(ModelKind::LogisticRegression)
        .ok_or_else(|| PipelineError::MissingFixture("trained logistic model".into()))?;
    let (train, test) = (&pipeline.train, &pipeline.test);
    if test.is_empty() || train.is_empty() {
        return Err(PipelineError::MissingFixture("train/test split".into()));
    }
    let settings = &pipeline.config.explainers;
    let seed = pipeline.config.seeds.explainer;
    let mut acc: Vec<(MetricId, Accumulator)> = Vec::new();
    let mut record = |metric: MetricId, out: &ExplainerOutput, result| {
        let i = match acc.iter().position(|(m, _)| *m == metric) {
            Some(i) => i,
            None => {
                acc.push((metric, Accumulator::new()));
                acc.len() - 1
            }
        };
        acc[i].1.add(&out.explainer_id, result);
    };

    let shap_cfg = crate::explainers::ShapConfig { seed, ..settings.shap };
    for row in &test.rows {
        match kernel_shap(model, row, train, &shap_cfg) {
            Ok(out) => {
                for m in [MetricId::Faithfulness, MetricId::Monotonicity] {
                    record(m, &out, compute_metric(m, &out, model, train, test));
                }
            }
            Err(e) => return Err(PipelineError::Stage { stage: super::Stage::Delegate, message: e.to_string() }),
        }
    }

    let rules = extract_rules(model, train, &settings.rules)
        .map_err(|e| PipelineError::Stage { stage: super::Stage::Delegate, message: e.to_string() })?;
    for m in [MetricId::AvgRuleLength, MetricId::Fidelity] {
        record(m, &rules, compute_metric(m, &rules, model, train, test));
    }

    let pd_cfg = ProtodashConfig { seed, m: settings.protodash.m.min(train.len()), ..settings.protodash.clone() };
    let protos = protodash(test, train, &pd_cfg)
        .map_err(|e| PipelineError::Stage { stage: super::Stage::Delegate, message: e.to_string() })?;
    for m in [MetricId::Diversity, MetricId::NonRepresentativeness] {
        record(m, &protos, compute_metric(m, &protos, model, train, test));
    }
    let cf_cfg = crate::explainers::CounterfactualConfig { seed, ..settings.counterfactual.clone() };
    let mut cf_failed = 0;
    for row in test.rows.iter().take(CF_INSTANCES) {
        match genetic_cf(model, row, train, &cf_cfg) {
            Ok(out) => {
                for m in [MetricId::Diversity, MetricId::NonRepresentativeness] {
                    record(m, &out, compute_metric(m, &out, model, train, test));
                }
            }
            Err(_) => cf_failed += 1,
        }
    }

    let registry = &pipeline.registry;
    let rows = acc
        .into_iter()
        .map(|(metric, a)| {
            let modality = match metric {
                MetricId::Faithfulness | MetricId::Monotonicity => Modality::Features,
                MetricId::AvgRuleLength | MetricId::Fidelity => Modality::Rules,
                MetricId::Diversity | MetricId::NonRepresentativeness => Modality::Samples,
            };
            let explanation_types = registry
                .entries
                .iter()
                .filter(|e| e.explainer_methods.iter().any(|m| a.explainers.contains(m)))
                .map(|e| e.explanation_type)
                .collect();
            let config_echo = match modality {
                Modality::Features => serde_json::json!({
                    "explainer": shap_cfg,
                    "instances": "test split",
                    "background": "train split",
                }),
                Modality::Rules => serde_json::json!({
                    "explainer": settings.rules,
                    "rules_fit_on": "train split",
                    "evaluated_on": "test split",
                }),
                Modality::Samples => serde_json::json!({
                    "protodash": pd_cfg,
                    "protodash_target": "test split",
                    "protodash_source": "train split",
                    "counterfactual": cf_cfg,
                    "counterfactual_instances": CF_INSTANCES,
                    "counterfactual_searches_failed": cf_failed,
                    "representativeness_reference": "test split",
                }),
            };
            let value = (!a.values.is_empty()).then(|| a.values.iter().sum::<f64>() / a.values.len() as f64);
            DelegateRow {
                metric,
                value,
                modality,
                explanation_types,
                explainer_ids: a.explainers,
                n_instances: a.values.len(),
                n_failed: a.failed,
                reference_value: reference_value(metric),
                config_echo,
            }
        })
        .collect();
    Ok(DelegateReport { model_kind: model.kind, rows })
}

fn synthesis_eval(pipeline: &Pipeline) -> Result<SynthesisReport, PipelineError> {
    let items = gold(pipeline)?;
    let seed = pipeline.config.seeds.explainer;
    let mut rows = Vec::new();
    for item in &items {
        let (rq, d, s) = pipeline.run_in_memory(&item.question, seed)?;
        rows.push(SynthesisRow {
            question: item.question.clone(),
            explanation_type: rq.explanation_type,
            reached_synthesis: d.supported,
            rendered: s.failures.is_empty(),
            scores: s.scores,
        });
    }
    let reached: Vec<&SynthesisScores> = rows.iter().filter(|r| r.reached_synthesis).map(|r| &r.scores).collect();
    let mean = |f: fn(&SynthesisScores) -> f64| {
        if reached.is_empty() {
            0.0
        } else {
            reached.iter().map(|s| f(s)).sum::<f64>() / reached.len() as f64
        }
    };
    let min = |f: fn(&SynthesisScores) -> f64| reached.iter().map(|s| f(s)).fold(f64::INFINITY, f64::min);
    let method_note = rows.first().map(|r| r.scores.method_note.clone()).unwrap_or_default();
    Ok(SynthesisReport {
        n_questions: rows.len(),
        n_reached: reached.len(),
        mean: SynthesisSummary {
            answer_relevance: mean(|s| s.answer_relevance),
            faithfulness: mean(|s| s.faithfulness),
            context_utilization: mean(|s| s.context_utilization),
        },
        min: SynthesisSummary {
            answer_relevance: min(|s| s.answer_relevance),
            faithfulness: min(|s| s.faithfulness),
            context_utilization: min(|s| s.context_utilization),
        },
        reference_llm_judged: SynthesisSummary { answer_relevance: 0.66, faithfulness: 0.25, context_utilization: 0.67 },
        method_note,
        rows,
    })
}
