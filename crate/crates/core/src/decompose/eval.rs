//! Field-level parser evaluation against a gold corpus.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecomposeError, ReframedQuestion};
use crate::registry::ExplanationType;

pub const DEFAULT_LEVENSHTEIN_THRESHOLD: f64 = 0.9;

/// Fields scored by [`evaluate_parser`], in report order.
pub const PARSER_FIELDS: [&str; 4] = ["explanation_type", "machine_interpretation", "action", "likelihood"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldItem {
    pub question: String,
    pub explanation_type: ExplanationType,
    pub machine_interpretation: String,
    pub action: String,
    pub likelihood: String,
}

/// A parser's answer as plain strings; an empty string means no answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParsedFields {
    pub explanation_type: String,
    pub machine_interpretation: String,
    pub action: String,
    pub likelihood: String,
}

impl ParsedFields {
    fn get(&self, field: &str) -> &str {
        match field {
            "explanation_type" => &self.explanation_type,
            "machine_interpretation" => &self.machine_interpretation,
            "action" => &self.action,
            "likelihood" => &self.likelihood,
            _ => "",
        }
    }
}

impl From<&ReframedQuestion> for ParsedFields {
    fn from(rq: &ReframedQuestion) -> Self {
        ParsedFields {
            explanation_type: rq.explanation_type.to_string(),
            machine_interpretation: rq.machine_interpretation.predicate.clone(),
            action: rq.action.to_string(),
            likelihood: rq.likelihood.name().to_string(),
        }
    }
}

impl From<&GoldItem> for ParsedFields {
    fn from(g: &GoldItem) -> Self {
        ParsedFields {
            explanation_type: g.explanation_type.to_string(),
            machine_interpretation: g.machine_interpretation.clone(),
            action: g.action.clone(),
            likelihood: g.likelihood.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Prf {
    fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Prf { precision, recall, f1, tp, fp, fn_ }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldScores {
    pub exact: Prf,
    pub levenshtein: Prf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mismatch {
    pub question: String,
    pub field: String,
    pub gold: String,
    pub predicted: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParserReport {
    pub n_items: usize,
    pub levenshtein_threshold: f64,
    pub per_field: BTreeMap<String, FieldScores>,
    /// Row = gold type, column = predicted type, both in `type_labels` order.
    pub type_labels: Vec<ExplanationType>,
    pub type_confusion: Vec<Vec<usize>>,
    pub per_type: BTreeMap<String, TypeScores>,
    pub type_accuracy: f64,
    pub mismatches: Vec<Mismatch>,
}

fn normalize_field(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// `1 - dist / max(len)` over characters of the normalized strings.
pub fn levenshtein_similarity(a: &str, b: &str) -> f64 {
    let (a, b) = (normalize_field(a), normalize_field(b));
    let len = a.chars().count().max(b.chars().count());
    if len == 0 {
        return 1.0;
    }
    1.0 - strsim::levenshtein(&a, &b) as f64 / len as f64
}

pub fn parse_gold(text: &str) -> Result<Vec<GoldItem>, DecomposeError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DecomposeError::BadGoldItem { line: i + 1, message: e.to_string() })
        })
        .collect()
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<Vec<GoldItem>, DecomposeError> {
    parse_gold(&std::fs::read_to_string(path)?)
}

/// Scores `parser` field by field. A non-empty prediction that matches is a
/// true positive; one that does not is both a false positive and a false
/// negative; an empty prediction is a false negative.
pub fn evaluate_parser(
    gold: &[GoldItem],
    parser: impl Fn(&str) -> ParsedFields,
    levenshtein_threshold: f64,
) -> Result<ParserReport, DecomposeError> {
    if gold.is_empty() {
        return Err(DecomposeError::EmptyGoldSet);
    }
    let labels = ExplanationType::ALL.to_vec();
    let idx = |t: ExplanationType| labels.iter().position(|&l| l == t).expect("all types listed");
    let mut confusion = vec![vec![0usize; labels.len()]; labels.len()];
    let mut counts: BTreeMap<&str, [usize; 6]> = PARSER_FIELDS.iter().map(|f| (*f, [0; 6])).collect();
    let mut mismatches = Vec::new();

    for item in gold {
        let predicted = parser(&item.question);
        let expected = ParsedFields::from(item);
        for field in PARSER_FIELDS {
            let (g, p) = (expected.get(field), predicted.get(field));
            let c = counts.get_mut(field).expect("field registered");
            let exact = !p.trim().is_empty() && normalize_field(g) == normalize_field(p);
            let close = !p.trim().is_empty() && levenshtein_similarity(g, p) >= levenshtein_threshold;
            for (offset, hit) in [(0, exact), (3, close)] {
                if hit {
                    c[offset] += 1;
                } else {
                    if !p.trim().is_empty() {
                        c[offset + 1] += 1;
                    }
                    c[offset + 2] += 1;
                }
            }
            if !exact {
                mismatches.push(Mismatch {
                    question: item.question.clone(),
                    field: field.to_string(),
                    gold: g.to_string(),
                    predicted: p.to_string(),
                });
            }
        }
        let predicted_type = predicted.explanation_type.parse().unwrap_or(ExplanationType::Unknown);
        confusion[idx(item.explanation_type)][idx(predicted_type)] += 1;
    }

    let per_field = counts
        .into_iter()
        .map(|(f, c)| {
            let scores = FieldScores { exact: Prf::from_counts(c[0], c[1], c[2]), levenshtein: Prf::from_counts(c[3], c[4], c[5]) };
            (f.to_string(), scores)
        })
        .collect();

    let mut per_type = BTreeMap::new();
    for (k, t) in labels.iter().enumerate() {
        let support: usize = confusion[k].iter().sum();
        let predicted: usize = confusion.iter().map(|row| row[k]).sum();
        if support == 0 && predicted == 0 {
            continue;
        }
        let tp = confusion[k][k];
        let prf = Prf::from_counts(tp, predicted - tp, support - tp);
        per_type.insert(t.to_string(), TypeScores { precision: prf.precision, recall: prf.recall, f1: prf.f1, support });
    }
    let correct: usize = (0..labels.len()).map(|k| confusion[k][k]).sum();

    Ok(ParserReport {
        n_items: gold.len(),
        levenshtein_threshold,
        per_field,
        type_labels: labels,
        type_confusion: confusion,
        per_type,
        type_accuracy: correct as f64 / gold.len() as f64,
        mismatches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn item(t: ExplanationType, mi: &str) -> GoldItem {
        GoldItem {
            question: format!("q {mi}"),
            explanation_type: t,
            machine_interpretation: mi.into(),
            action: "Explain".into(),
            likelihood: "Unspecified".into(),
        }
    }

    fn gold() -> Vec<GoldItem> {
        vec![
            item(ExplanationType::Rationale, "Predict(Diabetes, Age = 55)"),
            item(ExplanationType::Data, "Predict(Diabetes)"),
            item(ExplanationType::Contrastive, "Predict(Diabetes, BMI = 30)"),
        ]
    }

    #[test]
    fn echo_parser_is_perfect() {
        let g = gold();
        let lookup = g.clone();
        let report = evaluate_parser(
            &g,
            |q| ParsedFields::from(lookup.iter().find(|x| x.question == q).unwrap()),
            DEFAULT_LEVENSHTEIN_THRESHOLD,
        )
        .unwrap();
        for s in report.per_field.values() {
            assert_eq!(s.exact.f1, 1.0);
            assert_eq!(s.levenshtein.f1, 1.0);
        }
        assert_eq!(report.type_accuracy, 1.0);
        assert!(report.mismatches.is_empty());
    }

    #[test]
    fn empty_interpretation_only_hits_filter_free_items() {
        let g = gold();
        let report = evaluate_parser(
            &g,
            |_| ParsedFields { machine_interpretation: "Predict(Diabetes)".into(), ..Default::default() },
            DEFAULT_LEVENSHTEIN_THRESHOLD,
        )
        .unwrap();
        let mi = &report.per_field["machine_interpretation"].exact;
        assert_eq!((mi.tp, mi.fp, mi.fn_), (1, 2, 2));
        assert_eq!(report.per_field["action"].exact.recall, 0.0);
    }

    #[test]
    fn one_edit_is_a_levenshtein_match() {
        let s = levenshtein_similarity("Predict(Diabetes, Age = 55)", "Predict(Diabetes, Age = 54)");
        assert!((s - (1.0 - 1.0 / 27.0)).abs() < 1e-12);
        assert!(s >= 0.9);
    }

    #[test]
    fn confusion_rows_sum_to_support() {
        let g = gold();
        let report = evaluate_parser(
            &g,
            |_| ParsedFields { explanation_type: "Rationale".into(), ..Default::default() },
            DEFAULT_LEVENSHTEIN_THRESHOLD,
        )
        .unwrap();
        for (k, t) in report.type_labels.iter().enumerate() {
            let row: usize = report.type_confusion[k].iter().sum();
            assert_eq!(row, report.per_type.get(&t.to_string()).map_or(0, |s| s.support));
        }
        assert!((report.type_accuracy - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_gold_is_an_error() {
        assert!(matches!(
            evaluate_parser(&[], |_| ParsedFields::default(), 0.9),
            Err(DecomposeError::EmptyGoldSet)
        ));
    }

    #[test]
    fn bad_gold_line_is_reported() {
        let err = parse_gold("{\"question\": \"x\"}\n").unwrap_err();
        assert!(matches!(err, DecomposeError::BadGoldItem { line: 1, .. }));
    }

    proptest! {
        #[test]
        fn exact_never_exceeds_levenshtein(preds in proptest::collection::vec("[A-Za-z(),= 0-9]{0,30}", 3)) {
            let g = gold();
            let report = evaluate_parser(
                &g,
                |q| {
                    let k = g.iter().position(|x| x.question == q).unwrap();
                    ParsedFields {
                        explanation_type: preds[k].clone(),
                        machine_interpretation: preds[k].clone(),
                        action: preds[k].clone(),
                        likelihood: preds[k].clone(),
                    }
                },
                DEFAULT_LEVENSHTEIN_THRESHOLD,
            ).unwrap();
            for s in report.per_field.values() {
                prop_assert!(s.exact.f1 <= s.levenshtein.f1 + 1e-12);
                prop_assert!((0.0..=1.0).contains(&s.exact.f1));
            }
        }

        #[test]
        fn similarity_in_unit_interval(a in ".{0,20}", b in ".{0,20}") {
            let s = levenshtein_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(levenshtein_similarity(&a, &a), 1.0);
        }
    }
}
