//! Rendering explainer outputs into natural-language explanations.
//!
//! Every number in a rendered text comes from the bundle's fact table and is
//! printed through [`fmt_num`], so the text can be checked against the table
//! by plain string matching.

mod render;
mod score;
mod template;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use render::{render_explanation, rule_sentence, subset_text, Explanations};
pub use score::{content_stems, numeric_tokens, score_synthesis, SynthesisScores, STOP_WORDS};
pub use template::{NLTemplate, Slot};

use crate::decompose::ReframedQuestion;
use crate::explainers::{ExplainerOutput, FeatureAttribution, Payload, GENETIC_CF};
use crate::ingest::{filter_subset, ConstraintOp, Dataset, IngestError, SubsetSummary};

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("slot {slot} cannot be filled: {reason}")]
    SlotUnfillable { slot: Slot, reason: String },
    #[error("template {template} is for {expected}, bundle is {got}")]
    TemplateMismatch { template: String, expected: String, got: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

/// Canonical number text: integers without decimals, magnitudes below one
/// with four decimals, everything else with two.
pub fn fmt_num(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    if !v.is_finite() {
        return v.to_string();
    }
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e15 {
        return format!("{:.0}", v.round() + 0.0);
    }
    if v.abs() < 1.0 {
        format!("{v:.4}")
    } else {
        format!("{v:.2}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FactSource {
    Subset,
    /// A value the question itself filters on.
    Question,
    Explainer { explainer_id: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub fact_id: String,
    pub name: String,
    pub value: f64,
    pub source: FactSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextBundle {
    pub subset_summary: SubsetSummary,
    pub explainer_outputs: Vec<ExplainerOutput>,
    pub reframed: ReframedQuestion,
    pub fact_table: Vec<Fact>,
}

impl ContextBundle {
    pub fn output(&self, explainer_id: &str) -> Option<&ExplainerOutput> {
        self.explainer_outputs.iter().find(|o| o.explainer_id == explainer_id)
    }
}

/// Number of leading attributions carried into the fact table.
pub const TOP_ATTRIBUTIONS: usize = 3;
/// Opposing features shown as foils.
pub const MAX_FOILS: usize = 2;

/// Indices of supporting and opposing features for a contrastive reading.
/// Support is judged relative to the predicted class: positive attributions
/// support label 1, negative ones label 0. Supporting features come from the
/// top-ranked ones; foils are the strongest opposing features overall.
pub fn contrastive_split(attr: &FeatureAttribution) -> (Vec<usize>, Vec<usize>) {
    let sign = if attr.prediction >= 0.5 { 1.0 } else { -1.0 };
    let ranking = attr.ranking();
    let facts = ranking
        .iter()
        .take(TOP_ATTRIBUTIONS)
        .copied()
        .filter(|&i| sign * attr.attributions[i] > 0.0)
        .collect();
    let foils = ranking
        .iter()
        .copied()
        .filter(|&i| sign * attr.attributions[i] < 0.0)
        .take(MAX_FOILS)
        .collect();
    (facts, foils)
}

/// Features an attribution output contributes to the fact table, in rank
/// order: the top-ranked ones plus any foil outside them.
pub fn attribution_features(attr: &FeatureAttribution) -> Vec<usize> {
    let mut out: Vec<usize> = attr.ranking().into_iter().take(TOP_ATTRIBUTIONS).collect();
    for i in contrastive_split(attr).1 {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

/// Changed features of a counterfactual row, in schema order.
pub fn changed_features(instance: &[f64], row: &[f64]) -> Vec<usize> {
    (0..row.len()).filter(|&j| fmt_num(row[j]) != fmt_num(instance[j])).collect()
}

struct Facts(Vec<Fact>);

impl Facts {
    fn push(&mut self, id: String, name: String, value: f64, source: &FactSource) {
        self.0.push(Fact { fact_id: id, name, value, source: source.clone() });
    }
}

/// Filters the dataset with the question's constraints and collects the
/// values the renderer may cite.
pub fn retrieve_context(
    rq: &ReframedQuestion,
    ds: &Dataset,
    outputs: Vec<ExplainerOutput>,
) -> Result<ContextBundle, SynthesisError> {
    let (_, summary) = filter_subset(ds, &rq.machine_interpretation.constraints)?;
    let mut facts = Facts(Vec::new());
    let subset = FactSource::Subset;
    facts.push("subset.match_count".into(), "matching records".into(), summary.match_count as f64, &subset);
    facts.push("subset.total_count".into(), "records in dataset".into(), summary.total_count as f64, &subset);
    facts.push("subset.outcome_rate".into(), format!("share with {}", ds.schema.target_name), summary.outcome_rate, &subset);
    for s in &summary.per_feature_stats {
        facts.push(format!("subset.mean.{}", s.feature), format!("mean {}", s.feature), s.mean, &subset);
    }
    let question = FactSource::Question;
    for (k, c) in rq.machine_interpretation.constraints.iter().enumerate() {
        facts.push(format!("question.constraint{}.value", k + 1), format!("{} filter value", c.feature), c.value, &question);
        if let (ConstraintOp::Range, Some(h)) = (c.op, c.high) {
            facts.push(format!("question.constraint{}.high", k + 1), format!("{} filter upper bound", c.feature), h, &question);
        }
    }

    for out in &outputs {
        let src = FactSource::Explainer { explainer_id: out.explainer_id.clone() };
        let id = &out.explainer_id;
        match &out.payload {
            Payload::Features(a) => {
                facts.push(format!("{id}.prediction"), "predicted probability".into(), a.prediction, &src);
                for i in attribution_features(a) {
                    let f = &a.features[i];
                    facts.push(format!("{id}.attribution.{f}"), format!("attribution of {f}"), a.attributions[i], &src);
                    if let Some(x) = &out.instance {
                        facts.push(format!("{id}.value.{f}"), format!("{f} of the case"), x[i], &src);
                    }
                }
            }
            Payload::Samples(s) if out.explainer_id == GENETIC_CF => {
                let instance = out.instance.as_deref().unwrap_or(&[]);
                for (k, r) in s.rows.iter().enumerate() {
                    let tag = format!("{id}.cf{}", k + 1);
                    if let Some(p) = r.prediction {
                        facts.push(format!("{tag}.prediction"), "predicted probability".into(), p, &src);
                    }
                    if r.zero_change || instance.len() != r.values.len() {
                        continue;
                    }
                    for j in changed_features(instance, &r.values) {
                        let f = &s.features[j];
                        facts.push(format!("{tag}.{f}.from"), format!("{f} before"), instance[j], &src);
                        facts.push(format!("{tag}.{f}.to"), format!("{f} after"), r.values[j], &src);
                        facts.push(format!("{tag}.{f}.change"), format!("{f} change"), (r.values[j] - instance[j]).abs(), &src);
                    }
                }
            }
            Payload::Samples(s) => {
                for (k, r) in s.rows.iter().enumerate() {
                    let tag = format!("{id}.prototype{}", k + 1);
                    if let Some(rid) = r.row_id {
                        facts.push(format!("{tag}.row_id"), "record number".into(), rid as f64, &src);
                    }
                    facts.push(format!("{tag}.weight"), "prototype weight".into(), r.weight, &src);
                    for (f, v) in s.features.iter().zip(&r.values) {
                        facts.push(format!("{tag}.{f}"), f.clone(), *v, &src);
                    }
                }
            }
            Payload::Rules(rs) => {
                for (k, r) in rs.rules.iter().enumerate() {
                    let tag = format!("{id}.rule{}", k + 1);
                    for c in &r.conditions {
                        if let Some(l) = c.interval.low {
                            facts.push(format!("{tag}.{}.low", c.feature), format!("{} lower threshold", c.feature), l, &src);
                        }
                        if let Some(h) = c.interval.high {
                            facts.push(format!("{tag}.{}.high", c.feature), format!("{} upper threshold", c.feature), h, &src);
                        }
                    }
                    let label = rs.labels.get(r.label as usize).and_then(|l| l.parse::<f64>().ok());
                    if let Some(v) = label {
                        facts.push(format!("{tag}.label"), "rule label".into(), v, &src);
                    }
                    facts.push(format!("{tag}.coverage"), "rule coverage".into(), r.coverage, &src);
                    facts.push(format!("{tag}.precision"), "rule precision".into(), r.precision, &src);
                }
            }
        }
    }

    Ok(ContextBundle { subset_summary: summary, explainer_outputs: outputs, reframed: rq.clone(), fact_table: facts.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_formats() {
        assert_eq!(fmt_num(55.0), "55");
        assert_eq!(fmt_num(-3.0), "-3");
        assert_eq!(fmt_num(32.25), "32.25");
        assert_eq!(fmt_num(33.1234), "33.12");
        assert_eq!(fmt_num(0.25), "0.2500");
        assert_eq!(fmt_num(0.134), "0.1340");
        assert_eq!(fmt_num(-0.0312), "-0.0312");
        assert_eq!(fmt_num(-0.0), "0");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.0), "1");
    }

    #[test]
    fn contrastive_split_follows_predicted_class() {
        let attr = FeatureAttribution {
            features: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            attributions: vec![0.3, -0.2, 0.1, -0.05],
            base_value: 0.4,
            prediction: 0.55,
        };
        assert_eq!(contrastive_split(&attr), (vec![0, 2], vec![1, 3]));
        let neg = FeatureAttribution { prediction: 0.2, ..attr.clone() };
        assert_eq!(contrastive_split(&neg), (vec![1], vec![0, 2]));
        assert_eq!(attribution_features(&attr), vec![0, 1, 2, 3]);
    }
}
