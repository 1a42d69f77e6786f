//! Turns a user question into a [`ReframedQuestion`]: explanation type,
//! machine interpretation, action and likelihood.

mod eval;
mod extract;
mod grammar;

use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{
    evaluate_parser, levenshtein_similarity, load_gold, parse_gold, FieldScores, GoldItem, Mismatch, ParsedFields, ParserReport, Prf, TypeScores,
    DEFAULT_LEVENSHTEIN_THRESHOLD, PARSER_FIELDS,
};
pub use extract::{normalize, Extraction, FilterExtractor, Likelihood, UnrecognizedTerm};
pub use grammar::{parse_machine_interpretation, MachineInterpretation, ProposedChange};

use crate::ingest::DatasetSchema;
use crate::registry::{ExplanationType, Registry};

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("grammar error at {position}: {message}")]
    GrammarError { position: usize, message: String },
    #[error("unknown feature {0}")]
    UnknownFeature(String),
    #[error("gold set is empty")]
    EmptyGoldSet,
    #[error("gold corpus line {line}: {message}")]
    BadGoldItem { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionVerb {
    Predict,
    Explain,
    Describe,
    Compare,
}

impl ActionVerb {
    fn name(self) -> &'static str {
        match self {
            ActionVerb::Predict => "Predict",
            ActionVerb::Explain => "Explain",
            ActionVerb::Describe => "Describe",
            ActionVerb::Compare => "Compare",
        }
    }

    pub fn for_type(t: ExplanationType) -> Self {
        match t {
            ExplanationType::Data => ActionVerb::Describe,
            ExplanationType::Rationale | ExplanationType::Contextual => ActionVerb::Explain,
            ExplanationType::Contrastive => ActionVerb::Compare,
            ExplanationType::Counterfactual | ExplanationType::CaseBased | ExplanationType::Unknown => ActionVerb::Predict,
        }
    }
}

/// Keywords captured verbatim as action modifiers.
pub const ACTION_MODIFIERS: [&str; 8] = [
    "accuracy",
    "precision",
    "recall",
    "preprocessing",
    "imputation",
    "missing values",
    "distribution",
    "class balance",
];

/// Verb plus optional modifiers, written `Describe(accuracy, preprocessing)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Action {
    pub verb: ActionVerb,
    pub modifiers: Vec<String>,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.verb.name())?;
        if !self.modifiers.is_empty() {
            write!(f, "({})", self.modifiers.join(", "))?;
        }
        Ok(())
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (verb, rest) = match s.find('(') {
            Some(i) => (&s[..i], Some(&s[i + 1..])),
            None => (s, None),
        };
        let verb = match verb.trim() {
            "Predict" => ActionVerb::Predict,
            "Explain" => ActionVerb::Explain,
            "Describe" => ActionVerb::Describe,
            "Compare" => ActionVerb::Compare,
            other => return Err(format!("unknown action `{other}`")),
        };
        let modifiers = match rest {
            None => Vec::new(),
            Some(r) => r
                .strip_suffix(')')
                .ok_or_else(|| format!("unclosed modifier list in `{s}`"))?
                .split(',')
                .map(|m| m.trim().to_string())
                .filter(|m| !m.is_empty())
                .collect(),
        };
        Ok(Action { verb, modifiers })
    }
}

impl From<Action> for String {
    fn from(a: Action) -> String {
        a.to_string()
    }
}

impl TryFrom<String> for Action {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReframedQuestion {
    pub question: String,
    pub explanation_type: ExplanationType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matched_cue: Option<String>,
    pub machine_interpretation: MachineInterpretation,
    pub action: Action,
    pub likelihood: Likelihood,
    pub unrecognized_terms: Vec<UnrecognizedTerm>,
}

struct Cue {
    explanation_type: ExplanationType,
    text: String,
    re: Regex,
}

fn cue_regex(cue: &str) -> Regex {
    let segments: Vec<String> = cue
        .split("...")
        .map(|seg| {
            let words: Vec<String> = normalize(seg).split_whitespace().map(regex::escape).collect();
            format!(r"\b{}\b", words.join(r"\s+"))
        })
        .collect();
    Regex::new(&segments.join(".*?")).expect("cue pattern")
}

/// Deterministic grammar-based question parser for one schema and registry.
pub struct QuestionParser {
    schema: DatasetSchema,
    cues: Vec<Cue>,
    modifiers: Vec<(String, Regex)>,
    extractor: FilterExtractor,
}

impl QuestionParser {
    pub fn new(schema: &DatasetSchema, registry: &Registry) -> Self {
        let cues = registry
            .cue_table()
            .into_iter()
            .map(|(t, c)| Cue { explanation_type: t, text: c.to_string(), re: cue_regex(c) })
            .collect();
        let modifiers = ACTION_MODIFIERS.iter().map(|m| (m.to_string(), cue_regex(m))).collect();
        QuestionParser { schema: schema.clone(), cues, modifiers, extractor: FilterExtractor::new(schema) }
    }

    pub fn schema(&self) -> &DatasetSchema {
        &self.schema
    }

    /// First cue in table order that occurs in the text decides the type.
    pub fn classify(&self, text: &str) -> (ExplanationType, Option<String>) {
        let norm = normalize(text);
        self.cues
            .iter()
            .find(|c| c.re.is_match(&norm))
            .map_or((ExplanationType::Unknown, None), |c| (c.explanation_type, Some(c.text.clone())))
    }

    pub fn extract_filters(&self, text: &str) -> Extraction {
        self.extractor.extract(text)
    }

    pub fn parse(&self, text: &str) -> Result<ReframedQuestion, DecomposeError> {
        if text.trim().is_empty() {
            return Err(DecomposeError::EmptyQuestion);
        }
        let (explanation_type, matched_cue) = self.classify(text);
        let mut extraction = self.extract_filters(text);
        if explanation_type != ExplanationType::Counterfactual {
            extraction.proposed_changes.clear();
        }
        let norm = normalize(text);
        let mut found: Vec<(usize, String)> = self
            .modifiers
            .iter()
            .filter_map(|(m, re)| re.find(&norm).map(|hit| (hit.start(), m.clone())))
            .collect();
        found.sort();
        let action = Action {
            verb: ActionVerb::for_type(explanation_type),
            modifiers: found.into_iter().map(|(_, m)| m).collect(),
        };
        let head = if action.verb == ActionVerb::Describe { "Describe" } else { "Predict" };
        let machine_interpretation = MachineInterpretation::new(
            head,
            self.schema.target_name.clone(),
            extraction.constraints,
            extraction.proposed_changes,
            &self.schema,
        )?;
        Ok(ReframedQuestion {
            question: text.to_string(),
            explanation_type,
            matched_cue,
            machine_interpretation,
            action,
            likelihood: extraction.likelihood,
            unrecognized_terms: extraction.unrecognized_terms,
        })
    }
}

pub fn classify_explanation_type(text: &str, schema: &DatasetSchema, registry: &Registry) -> (ExplanationType, Option<String>) {
    QuestionParser::new(schema, registry).classify(text)
}

pub fn extract_filters(text: &str, schema: &DatasetSchema) -> Extraction {
    FilterExtractor::new(schema).extract(text)
}

pub fn parse_question(text: &str, schema: &DatasetSchema, registry: &Registry) -> Result<ReframedQuestion, DecomposeError> {
    QuestionParser::new(schema, registry).parse(text)
}
