use serde::{Deserialize, Serialize};

use super::{
    changed_features, contrastive_split, fmt_num, ContextBundle, NLTemplate, Slot, SynthesisError, TOP_ATTRIBUTIONS,
};
use crate::explainers::{ExplainerOutput, FeatureAttribution, Rule, SampleSet, GENETIC_CF};
use crate::ingest::{ConstraintOp, FeatureConstraint};
use crate::registry::Modality;

/// The two texts produced for one question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Explanations {
    pub subset_text: String,
    pub explainer_text: String,
}

fn constraint_phrase(c: &FeatureConstraint) -> String {
    let v = fmt_num(c.value);
    match c.op {
        ConstraintOp::Eq => format!("{} equal to {v}", c.feature),
        ConstraintOp::Lt => format!("{} below {v}", c.feature),
        ConstraintOp::Le => format!("{} at most {v}", c.feature),
        ConstraintOp::Gt => format!("{} above {v}", c.feature),
        ConstraintOp::Ge => format!("{} at least {v}", c.feature),
        ConstraintOp::Range => format!("{} between {v} and {}", c.feature, fmt_num(c.high.unwrap_or(c.value))),
    }
}

fn match_sentence(bundle: &ContextBundle) -> String {
    let s = &bundle.subset_summary;
    let constraints = &bundle.reframed.machine_interpretation.constraints;
    let total = fmt_num(s.total_count as f64);
    let cond = constraints.iter().map(constraint_phrase).collect::<Vec<_>>().join(" and ");
    if s.fallback_used {
        format!(
            "There are no full matches in the dataset for records with {cond} ({} of {total} records matched), so the figures below describe all {total} records.",
            fmt_num(s.match_count as f64)
        )
    } else if constraints.is_empty() {
        format!("The question sets no filters, so the figures below describe all {total} records.")
    } else {
        format!("{} of {total} records have {cond}.", fmt_num(s.match_count as f64))
    }
}

fn subset_stats(bundle: &ContextBundle) -> String {
    let s = &bundle.subset_summary;
    let target = &bundle.reframed.machine_interpretation.target_label;
    let mut lines = vec![format!("Share with {target}: {}.", fmt_num(s.outcome_rate)), "Mean values:".to_string()];
    lines.extend(s.per_feature_stats.iter().map(|f| format!("- {}: {}", f.feature, fmt_num(f.mean))));
    lines.join("\n")
}

fn condition_phrase(feature: &str, low: Option<f64>, high: Option<f64>) -> String {
    match (low, high) {
        (Some(l), Some(h)) => {
            format!("{feature} is greater than {} and less than or equal to {}", fmt_num(l), fmt_num(h))
        }
        (Some(l), None) => format!("{feature} is greater than {}", fmt_num(l)),
        (None, Some(h)) => format!("{feature} is less than or equal to {}", fmt_num(h)),
        (None, None) => format!("{feature} takes any value"),
    }
}

/// `IF <conditions>, THEN label = <label>`.
pub fn rule_sentence(rule: &Rule, labels: &[String]) -> String {
    let antecedent = if rule.conditions.is_empty() {
        "any values".to_string()
    } else {
        rule.conditions
            .iter()
            .map(|c| condition_phrase(&c.feature, c.interval.low, c.interval.high))
            .collect::<Vec<_>>()
            .join(" AND ")
    };
    let label = labels.get(rule.label as usize).cloned().unwrap_or_else(|| rule.label.to_string());
    format!("IF {antecedent}, THEN label = {label}")
}

fn unfillable(slot: Slot, reason: impl Into<String>) -> SynthesisError {
    SynthesisError::SlotUnfillable { slot, reason: reason.into() }
}

fn by_modality(bundle: &ContextBundle, modality: Modality, counterfactual: bool) -> Option<&ExplainerOutput> {
    bundle
        .explainer_outputs
        .iter()
        .find(|o| o.modality == modality && (modality != Modality::Samples || (o.explainer_id == GENETIC_CF) == counterfactual))
}

fn rules_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let rs = by_modality(bundle, Modality::Rules, false)
        .and_then(ExplainerOutput::rules)
        .ok_or_else(|| unfillable(Slot::Rules, "no rule output"))?;
    if rs.rules.is_empty() {
        return Err(unfillable(Slot::Rules, "zero rules extracted"));
    }
    Ok(rs
        .rules
        .iter()
        .map(|r| {
            format!(
                "- {} (coverage {}, precision {})",
                rule_sentence(r, &rs.labels),
                fmt_num(r.coverage),
                fmt_num(r.precision)
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn attribution(bundle: &ContextBundle, slot: Slot) -> Result<(&ExplainerOutput, &FeatureAttribution, &[f64]), SynthesisError> {
    let out = by_modality(bundle, Modality::Features, false).ok_or_else(|| unfillable(slot, "no attribution output"))?;
    let attr = out.attributions().ok_or_else(|| unfillable(slot, "no attribution output"))?;
    let x = out.instance.as_deref().ok_or_else(|| unfillable(slot, "attribution output has no instance"))?;
    Ok((out, attr, x))
}

fn leaning(bundle: &ContextBundle, positive: bool) -> String {
    let target = &bundle.reframed.machine_interpretation.target_label;
    if positive {
        format!("toward {target}")
    } else {
        format!("away from {target}")
    }
}

fn facts_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let (_, attr, x) = attribution(bundle, Slot::Facts)?;
    let positive = attr.prediction >= 0.5;
    let target = &bundle.reframed.machine_interpretation.target_label;
    let mut lines = vec![format!("- the model gives a probability of {} for {target}", fmt_num(attr.prediction))];
    let (facts, _) = contrastive_split(attr);
    if facts.is_empty() {
        lines.push("- none of the leading features pushes the prediction this way on its own".into());
    }
    for i in facts {
        lines.push(format!(
            "- {} of {} moves the prediction {} (attribution {})",
            attr.features[i],
            fmt_num(x[i]),
            leaning(bundle, positive),
            fmt_num(attr.attributions[i])
        ));
    }
    Ok(lines.join("\n"))
}

fn foils_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let (out, attr, x) = attribution(bundle, Slot::Foils)?;
    let positive = attr.prediction >= 0.5;
    let (_, foils) = contrastive_split(attr);
    if foils.is_empty() {
        return Ok("- no feature of this case points toward the other outcome".into());
    }
    Ok(foils
        .iter()
        .map(|&i| {
            let f = &attr.features[i];
            let mean = out.diagnostics.get(&format!("background_mean.{f}")).copied();
            let direction = match mean {
                Some(m) if x[i] < m => "lower",
                _ => "higher",
            };
            format!(
                "- had {f} been even {direction} than {}, the prediction would lean further {} (attribution {})",
                fmt_num(x[i]),
                leaning(bundle, !positive),
                fmt_num(attr.attributions[i])
            )
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn ranking_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let (_, attr, _) = attribution(bundle, Slot::AttributionRanking)?;
    Ok(attr
        .ranking()
        .into_iter()
        .take(TOP_ATTRIBUTIONS)
        .map(|i| attr.features[i].clone())
        .collect::<Vec<_>>()
        .join(", "))
}

fn deltas_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let out = by_modality(bundle, Modality::Samples, true)
        .ok_or_else(|| unfillable(Slot::CounterfactualDeltas, "no counterfactual output"))?;
    let s: &SampleSet = out.samples().ok_or_else(|| unfillable(Slot::CounterfactualDeltas, "no samples"))?;
    let x = out.instance.as_deref().ok_or_else(|| unfillable(Slot::CounterfactualDeltas, "no instance"))?;
    if s.rows.is_empty() {
        return Err(unfillable(Slot::CounterfactualDeltas, "no counterfactuals"));
    }
    let target = &bundle.reframed.machine_interpretation.target_label;
    Ok(s.rows
        .iter()
        .map(|r| {
            if r.zero_change {
                return "- the case already receives the requested outcome, so no change is needed".to_string();
            }
            let changes: Vec<String> = changed_features(x, &r.values)
                .into_iter()
                .map(|j| {
                    let verb = if r.values[j] > x[j] { "raise" } else { "lower" };
                    format!(
                        "{verb} {} by {}, from {} to {}",
                        s.features[j],
                        fmt_num((r.values[j] - x[j]).abs()),
                        fmt_num(x[j]),
                        fmt_num(r.values[j])
                    )
                })
                .collect();
            let tail = r
                .prediction
                .map(|p| format!("; the probability of {target} becomes {}", fmt_num(p)))
                .unwrap_or_default();
            format!("- {}{tail}", changes.join("; "))
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

fn prototypes_slot(bundle: &ContextBundle) -> Result<String, SynthesisError> {
    let s = by_modality(bundle, Modality::Samples, false)
        .and_then(ExplainerOutput::samples)
        .ok_or_else(|| unfillable(Slot::Prototypes, "no prototype output"))?;
    if s.rows.is_empty() {
        return Err(unfillable(Slot::Prototypes, "no prototypes selected"));
    }
    Ok(s.rows
        .iter()
        .map(|r| {
            let head = match r.row_id {
                Some(id) => format!("record {}", fmt_num(id as f64)),
                None => "a record".to_string(),
            };
            let values: Vec<String> =
                s.features.iter().zip(&r.values).map(|(f, v)| format!("{f} {}", fmt_num(*v))).collect();
            format!("- {head}, weight {}: {}", fmt_num(r.weight), values.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n"))
}

/// Match status followed by the subset's outcome rate and feature means.
pub fn subset_text(bundle: &ContextBundle) -> String {
    format!("{}\n{}", match_sentence(bundle), subset_stats(bundle))
}

/// Renders the subset summary and the template-driven explainer summary.
pub fn render_explanation(template: &NLTemplate, bundle: &ContextBundle) -> Result<Explanations, SynthesisError> {
    if template.explanation_type != bundle.reframed.explanation_type {
        return Err(SynthesisError::TemplateMismatch {
            template: template.template_id.clone(),
            expected: template.explanation_type.to_string(),
            got: bundle.reframed.explanation_type.to_string(),
        });
    }
    let subset_text = subset_text(bundle);
    let explainer_text = template.fill(|slot| match slot {
        Slot::SubsetStats => Ok(subset_stats(bundle)),
        Slot::MatchCount => Ok(match_sentence(bundle)),
        Slot::Rules => rules_slot(bundle),
        Slot::Facts => facts_slot(bundle),
        Slot::Foils => foils_slot(bundle),
        Slot::AttributionRanking => ranking_slot(bundle),
        Slot::CounterfactualDeltas => deltas_slot(bundle),
        Slot::Prototypes => prototypes_slot(bundle),
        Slot::ClosingGuidance => template
            .closing_guidance
            .clone()
            .ok_or_else(|| unfillable(Slot::ClosingGuidance, "template has no guidance text")),
    })?;
    Ok(Explanations { subset_text, explainer_text })
}
