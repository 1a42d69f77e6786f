//! Pattern-based extraction of feature filters from question text.

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use super::grammar::ProposedChange;
use crate::ingest::{ConstraintOp, DatasetSchema, FeatureConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    High,
    Low,
    Unspecified,
}

impl Likelihood {
    pub fn name(self) -> &'static str {
        match self {
            Likelihood::High => "High",
            Likelihood::Low => "Low",
            Likelihood::Unspecified => "Unspecified",
        }
    }
}

/// A mention that looks like a feature but is not part of the schema.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnrecognizedTerm {
    pub term: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extraction {
    pub constraints: Vec<FeatureConstraint>,
    pub proposed_changes: Vec<ProposedChange>,
    pub unrecognized_terms: Vec<UnrecognizedTerm>,
    pub likelihood: Likelihood,
}

const NUM: &str = r"(-?\d+(?:\.\d+)?)";
const FILLER: &str = r"(?:\s+(?:levels?|values?|readings?|scores?|counts?))?";
const OWNER: &str = r"(?:(?:the|her|his|their|a|its|the\s+patient's|patient's)\s+)?";

const HIGH_PHRASES: [&str; 8] = [
    "more likely",
    "higher chance",
    "higher risk",
    "higher likelihood",
    "more probable",
    "greater risk",
    "greater chance",
    "increased risk",
];
const LOW_PHRASES: [&str; 8] = [
    "less likely",
    "unlikely",
    "lower chance",
    "lower risk",
    "less probable",
    "not likely",
    "lower likelihood",
    "reduced risk",
];

const SEX_WORDS: &str = r"\b(woman|women|female|females|man|men|male|males|girl|girls|boy|boys|lady|ladies)\b";
const FOREIGN_FEATURES: &str =
    r"\b(cholesterol|weight|height|heart rate|hba1c|smoking|smoker|ethnicity|race|income|sex|gender|temperature)\b";
const GENERIC_STOP: [&str; 14] = [
    "the", "a", "an", "age", "ages", "range", "set", "number", "one", "cases", "examples", "example", "percentage", "top",
];

#[derive(Debug, Clone, Copy)]
enum Effect {
    /// Constraint from `x` with the relation captured in `rel`.
    Relation,
    /// Fixed operation on `x`.
    Fixed(ConstraintOp),
    /// `x` to `y` range.
    Range,
    /// Constraint on `y`, proposed change to `x`.
    InsteadOf,
    /// Constraint on `x`, proposed change to `y`.
    FromTo,
    /// Proposed change to `x`.
    Change,
}

struct Rule {
    re: Regex,
    effect: Effect,
    /// Feature index used when the pattern has no alias group.
    fixed_feature: Option<usize>,
}

/// Compiled extraction rules for one schema.
pub struct FilterExtractor {
    schema: DatasetSchema,
    rules: Vec<Rule>,
    sex: Regex,
    foreign: Regex,
    generic: Regex,
    likelihood: Vec<(Regex, Likelihood)>,
}

fn relation_op(rel: &str) -> Option<ConstraintOp> {
    let rel = rel.split_whitespace().collect::<Vec<_>>().join(" ");
    let rel = rel.strip_prefix("of ").or_else(|| rel.strip_prefix("is ")).unwrap_or(&rel);
    Some(match rel {
        "" | "of" | "is" | "was" | "=" | ":" | "equal to" | "equals" | "at" => ConstraintOp::Eq,
        "at least" | "no less than" | ">=" => ConstraintOp::Ge,
        "at most" | "no more than" | "<=" => ConstraintOp::Le,
        "over" | "above" | "more than" | "greater than" | "higher than" | "exceeding" | "exceeds" | ">" | "older than" => {
            ConstraintOp::Gt
        }
        "under" | "below" | "less than" | "lower than" | "fewer than" | "<" | "younger than" => ConstraintOp::Lt,
        _ => return None,
    })
}

fn word_regex(phrase: &str) -> String {
    phrase.split_whitespace().map(regex::escape).collect::<Vec<_>>().join(r"\s+")
}

impl FilterExtractor {
    pub fn new(schema: &DatasetSchema) -> Self {
        let forms = schema.surface_forms();
        let alias_alt = forms.iter().map(|(f, _)| word_regex(f)).collect::<Vec<_>>().join("|");
        let alias = format!(r"\b(?P<a>{alias_alt})s?\b");
        let rel_after = r"(?P<rel>(?:of\s+|is\s+)?(?:at\s+least|no\s+less\s+than|at\s+most|no\s+more\s+than|more\s+than|greater\s+than|higher\s+than|less\s+than|lower\s+than|over|above|under|below|exceeding|exceeds|equal\s+to|equals)|of|is|was|at|>=|<=|=|<|>|:)?";
        let rel_before = r"(?:(?P<rel>at\s+least|at\s+most|more\s+than|fewer\s+than|less\s+than|over|under|no\s+more\s+than|no\s+less\s+than)\s+)?";
        let change_verb = r"(?:were|was|is|had\s+been|got)?\s*(?:changed|reduced|increased|lowered|raised|decreased|dropped|fell|rose|went\s+down|went\s+up|set|brought\s+down)";
        let verb_first = r"\b(?:reduce|reduced|reducing|lower|lowered|lowering|increase|increased|increasing|raise|raised|raising|change|changed|changing|decrease|decreased|drop|dropped|set|bring)";
        let age = schema.resolve("age");

        let mut rules = Vec::new();
        let mut push = |pattern: String, effect: Effect, fixed_feature: Option<usize>| {
            rules.push(Rule { re: Regex::new(&pattern).expect("extraction pattern"), effect, fixed_feature });
        };

        push(
            format!(r"{alias}{FILLER}\s+(?:went|dropped|fell|rose|changed|moved|goes|drops|falls|rises|decreased|increased|was\s+reduced|was\s+increased|were\s+reduced|were\s+increased)\s+from\s+{NUM}\s+to\s+{NUM}"),
            Effect::FromTo,
            None,
        );
        push(format!(r"{verb_first}\s+{OWNER}{alias}{FILLER}\s+from\s+{NUM}\s+to\s+{NUM}"), Effect::FromTo, None);
        push(
            format!(r"{alias}{FILLER}\s+(?:(?:were|was|is|of|at|=|had\s+been)\s+)?{NUM}\s+instead\s+of\s+{NUM}"),
            Effect::InsteadOf,
            None,
        );
        push(format!(r"\b{NUM}\s+{alias}\s+instead\s+of\s+{NUM}"), Effect::InsteadOf, None);
        push(format!(r"{alias}{FILLER}\s+{change_verb}\s+to\s+{NUM}"), Effect::Change, None);
        push(format!(r"{verb_first}\s+{OWNER}{alias}{FILLER}\s+to\s+{NUM}"), Effect::Change, None);
        push(format!(r"{alias}{FILLER}\s+(?:were|had\s+been|became)\s+{NUM}"), Effect::Change, None);

        if let Some(age) = age {
            push(format!(r"\b{NUM}[\s-]*years?[\s-]*old\b"), Effect::Fixed(ConstraintOp::Eq), Some(age));
            push(format!(r"\b{NUM}[\s-]+year\b"), Effect::Fixed(ConstraintOp::Eq), Some(age));
            push(format!(r"\baged\s+between\s+{NUM}\s+and\s+{NUM}"), Effect::Range, Some(age));
            push(format!(r"\bbetween\s+the\s+ages\s+of\s+{NUM}\s+and\s+{NUM}"), Effect::Range, Some(age));
            push(format!(r"\baged\s+{rel_before}{NUM}"), Effect::Relation, Some(age));
            push(format!(r"\b(?P<rel>older\s+than|younger\s+than)\s+{NUM}"), Effect::Relation, Some(age));
            push(format!(r"\bover\s+the\s+age\s+of\s+{NUM}"), Effect::Fixed(ConstraintOp::Gt), Some(age));
            push(format!(r"\bunder\s+the\s+age\s+of\s+{NUM}"), Effect::Fixed(ConstraintOp::Lt), Some(age));
        }

        push(format!(r"{alias}{FILLER}\s+(?:of\s+|is\s+)?between\s+{NUM}\s+and\s+{NUM}"), Effect::Range, None);
        push(format!(r"{alias}{FILLER}\s+(?:of\s+|is\s+)?from\s+{NUM}\s+to\s+{NUM}"), Effect::Range, None);
        push(format!(r"{alias}{FILLER}\s*{rel_after}\s*{NUM}\b"), Effect::Relation, None);
        push(format!(r"\b{rel_before}{NUM}\s+{alias}"), Effect::Relation, None);

        if let Some(age) = age {
            push(format!(r"\b(?P<rel>over|above|under|below)\s+{NUM}\b(?:\s+years?(?:\s+old)?)?"), Effect::Relation, Some(age));
        }

        let phrase = |p: &str| Regex::new(&format!(r"\b{}\b", word_regex(p))).expect("likelihood pattern");
        let mut likelihood: Vec<(Regex, Likelihood)> = LOW_PHRASES.iter().map(|p| (phrase(p), Likelihood::Low)).collect();
        likelihood.extend(HIGH_PHRASES.iter().map(|p| (phrase(p), Likelihood::High)));

        FilterExtractor {
            schema: schema.clone(),
            rules,
            sex: Regex::new(SEX_WORDS).expect("sex pattern"),
            foreign: Regex::new(&format!(r"{FOREIGN_FEATURES}{FILLER}(?:\s+(?:of|is|=|at))?\s*{NUM}?")).expect("foreign pattern"),
            generic: Regex::new(&format!(r"\b([a-z]+){FILLER}\s+(?:of|=|is)\s+{NUM}\b")).expect("generic pattern"),
            likelihood,
        }
    }

    fn feature_of(&self, caps: &Captures, rule: &Rule) -> Option<usize> {
        match caps.name("a") {
            Some(m) => self.schema.resolve(m.as_str()),
            None => rule.fixed_feature,
        }
    }

    pub fn extract(&self, text: &str) -> Extraction {
        let text = normalize(text);
        let mut consumed = vec![false; text.len()];
        let mut constraints = Vec::new();
        let mut changes = Vec::new();

        for rule in &self.rules {
            for caps in rule.re.captures_iter(&text) {
                let span = caps.get(0).expect("group 0");
                if consumed[span.start()..span.end()].iter().any(|&c| c) {
                    continue;
                }
                let Some(j) = self.feature_of(&caps, rule) else { continue };
                let feature = self.schema.feature_names[j].clone();
                let nums: Vec<f64> = caps
                    .iter()
                    .skip(1)
                    .zip(rule.re.capture_names().skip(1))
                    .filter(|(_, name)| name.is_none())
                    .filter_map(|(m, _)| m.and_then(|m| m.as_str().parse().ok()))
                    .collect();
                let tol = self.schema.eq_tolerance[j];
                let applied = match (rule.effect, nums.as_slice()) {
                    (Effect::Relation, [x]) => {
                        let rel = caps.name("rel").map_or("", |m| m.as_str());
                        relation_op(rel).map(|op| constraints.push(FeatureConstraint::new(&feature, op, *x).with_tolerance(tol)))
                    }
                    (Effect::Fixed(op), [x]) => Some(constraints.push(FeatureConstraint::new(&feature, op, *x).with_tolerance(tol))),
                    (Effect::Range, [a, b]) => {
                        let (lo, hi) = if a <= b { (*a, *b) } else { (*b, *a) };
                        Some(constraints.push(FeatureConstraint::range(&feature, lo, hi).with_tolerance(tol)))
                    }
                    (Effect::InsteadOf | Effect::FromTo, [x, y]) => {
                        let (new, old) = if matches!(rule.effect, Effect::FromTo) { (*y, *x) } else { (*x, *y) };
                        constraints.push(FeatureConstraint::eq(&feature, old).with_tolerance(tol));
                        changes.push(ProposedChange { feature: feature.clone(), value: new });
                        Some(())
                    }
                    (Effect::Change, [x]) => Some(changes.push(ProposedChange { feature: feature.clone(), value: *x })),
                    _ => None,
                };
                if applied.is_some() {
                    consumed[span.start()..span.end()].iter_mut().for_each(|c| *c = true);
                }
            }
        }

        let mut unrecognized: Vec<UnrecognizedTerm> = Vec::new();
        let mut push_term = |term: UnrecognizedTerm| {
            if !unrecognized.contains(&term) {
                unrecognized.push(term);
            }
        };
        for m in self.sex.find_iter(&text) {
            push_term(UnrecognizedTerm { term: m.as_str().to_string(), value: None });
        }
        for caps in self.foreign.captures_iter(&text) {
            let span = caps.get(0).expect("group 0");
            consumed[span.start()..span.end()].iter_mut().for_each(|c| *c = true);
            push_term(UnrecognizedTerm { term: caps[1].to_string(), value: caps.get(2).map(|m| m.as_str().to_string()) });
        }
        for caps in self.generic.captures_iter(&text) {
            let span = caps.get(0).expect("group 0");
            let word = &caps[1];
            if consumed[span.start()..span.end()].iter().any(|&c| c)
                || GENERIC_STOP.contains(&word)
                || self.schema.resolve(word).is_some()
            {
                continue;
            }
            push_term(UnrecognizedTerm { term: word.to_string(), value: Some(caps[2].to_string()) });
        }

        let likelihood = self
            .likelihood
            .iter()
            .filter_map(|(re, l)| re.find(&text).map(|m| (m.start(), *l)))
            .min_by_key(|(start, _)| *start)
            .map_or(Likelihood::Unspecified, |(_, l)| l);

        Extraction { constraints, proposed_changes: changes, unrecognized_terms: unrecognized, likelihood }
    }
}

/// Lowercases and strips punctuation that never carries meaning for the
/// extraction patterns. Decimal points, hyphens, apostrophes and comparison
/// symbols survive.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let chars: Vec<char> = text.chars().collect();
    for (i, &c) in chars.iter().enumerate() {
        let c = match c {
            '\u{2018}' | '\u{2019}' => '\'',
            '\u{2013}' | '\u{2014}' => '-',
            _ => c,
        };
        let keep = c.is_alphanumeric()
            || matches!(c, '-' | '\'' | '<' | '>' | '=')
            || (c == '.' && i > 0 && chars[i - 1].is_ascii_digit() && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit()));
        if keep {
            out.extend(c.to_lowercase());
        } else {
            out.push(' ');
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decompose::tests::pima_schema;

    fn ex(text: &str) -> Extraction {
        FilterExtractor::new(&pima_schema()).extract(text)
    }

    fn c(f: &str, op: ConstraintOp, v: f64) -> FeatureConstraint {
        FeatureConstraint::new(f, op, v)
    }

    #[test]
    fn woman_with_bmi() {
        let e = ex("Why is a 60-year-old woman with a BMI of 28 more likely to have Diabetes?");
        assert_eq!(e.constraints, vec![c("Age", ConstraintOp::Eq, 60.0), c("BMI", ConstraintOp::Eq, 28.0)]);
        assert_eq!(e.likelihood, Likelihood::High);
        assert_eq!(e.unrecognized_terms, vec![UnrecognizedTerm { term: "woman".into(), value: None }]);
    }

    #[test]
    fn no_filters() {
        let e = ex("Why did the model predict Diabetes?");
        assert!(e.constraints.is_empty());
        assert!(e.proposed_changes.is_empty());
        assert_eq!(e.likelihood, Likelihood::Unspecified);
    }

    #[test]
    fn instead_of_becomes_constraint_and_change() {
        let e = ex("What if the glucose were 120 instead of 150 for a patient aged 40?");
        assert_eq!(e.constraints, vec![c("Glucose", ConstraintOp::Eq, 150.0), c("Age", ConstraintOp::Eq, 40.0)]);
        assert_eq!(e.proposed_changes, vec![ProposedChange { feature: "Glucose".into(), value: 120.0 }]);
    }

    #[test]
    fn comparatives() {
        assert_eq!(ex("patients over 50").constraints, vec![c("Age", ConstraintOp::Gt, 50.0)]);
        assert_eq!(ex("a BMI under 25").constraints, vec![c("BMI", ConstraintOp::Lt, 25.0)]);
        assert_eq!(ex("glucose of at least 150").constraints, vec![c("Glucose", ConstraintOp::Ge, 150.0)]);
        assert_eq!(ex("at most 2 pregnancies").constraints, vec![c("Pregnancies", ConstraintOp::Le, 2.0)]);
        assert_eq!(ex("younger than 25").constraints, vec![c("Age", ConstraintOp::Lt, 25.0)]);
        assert_eq!(ex("insulin levels above 200").constraints, vec![c("Insulin", ConstraintOp::Gt, 200.0)]);
    }

    #[test]
    fn ranges() {
        assert_eq!(ex("a BMI between 25 and 30").constraints, vec![FeatureConstraint::range("BMI", 25.0, 30.0)]);
        assert_eq!(ex("women aged between 30 and 40").constraints, vec![FeatureConstraint::range("Age", 30.0, 40.0)]);
    }

    #[test]
    fn from_to_change() {
        let e = ex("What if blood pressure dropped from 90 to 70?");
        assert_eq!(e.constraints, vec![c("BloodPressure", ConstraintOp::Eq, 90.0)]);
        assert_eq!(e.proposed_changes, vec![ProposedChange { feature: "BloodPressure".into(), value: 70.0 }]);
    }

    #[test]
    fn verb_first_change() {
        let e = ex("What would happen if we lower the glucose to 95?");
        assert!(e.constraints.is_empty());
        assert_eq!(e.proposed_changes, vec![ProposedChange { feature: "Glucose".into(), value: 95.0 }]);
    }

    #[test]
    fn foreign_features_are_recorded_not_filtered() {
        let e = ex("Does a male with cholesterol of 200 and a temperature of 38 have diabetes?");
        assert!(e.constraints.is_empty());
        let terms: Vec<_> = e.unrecognized_terms.iter().map(|t| (t.term.as_str(), t.value.as_deref())).collect();
        assert_eq!(terms, vec![("male", None), ("cholesterol", Some("200")), ("temperature", Some("38"))]);
    }

    #[test]
    fn likelihood_low() {
        assert_eq!(ex("is she less likely to be diabetic").likelihood, Likelihood::Low);
        assert_eq!(ex("why is he unlikely to have diabetes").likelihood, Likelihood::Low);
    }

    #[test]
    fn decimals_survive_normalization() {
        assert_eq!(normalize("BMI of 43.1."), "bmi of 43.1");
        assert_eq!(normalize("A  55-year-old, male?"), "a 55-year-old male");
    }
}
