use std::collections::BTreeSet;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};

use super::{fmt_num, ContextBundle, Explanations};

/// English function words ignored by the relevance proxy.
pub const STOP_WORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "am", "an", "and", "any", "are", "as", "at", "be",
    "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could", "did", "do",
    "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has", "have", "having", "he",
    "her", "here", "hers", "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "me",
    "might", "more", "most", "my", "no", "nor", "not", "now", "of", "off", "on", "once", "only", "or", "other", "our",
    "ours", "out", "over", "own", "same", "she", "should", "so", "some", "such", "than", "that", "the", "their",
    "theirs", "them", "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until",
    "up", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will",
    "with", "would", "you", "your", "yours", "s", "t", "don", "whose", "within", "without", "also", "like", "get",
    "got", "please", "tell", "show", "give", "let", "us", "one", "someone", "patient", "person",
];

pub const METHOD_NOTE: &str = "Deterministic proxies, not LLM-judged scores: context_utilization is the share of \
fact-table values that appear verbatim in the texts; faithfulness is the share of numeric tokens in the texts \
that equal some fact-table value after canonical formatting; answer_relevance is the share of the question's \
content-word stems that also occur in the texts.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisScores {
    pub answer_relevance: f64,
    pub faithfulness: f64,
    pub context_utilization: f64,
    pub method_note: String,
}

/// Signed decimal numbers appearing in `text`.
pub fn numeric_tokens(text: &str) -> Vec<String> {
    let re = Regex::new(r"-?\d+(?:\.\d+)?").expect("static regex");
    re.find_iter(text)
        .filter(|m| {
            let before = text[..m.start()].chars().next_back();
            !before.is_some_and(|c| c.is_alphanumeric() || c == '_')
        })
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Lowercased Porter stems of alphabetic words, stop words removed. CamelCase
/// identifiers are split so `BloodPressure` matches "blood pressure".
pub fn content_stems(text: &str) -> BTreeSet<String> {
    let stemmer = Stemmer::create(Algorithm::English);
    let camel = Regex::new(r"([a-z])([A-Z])").expect("static regex");
    let spaced = camel.replace_all(text, "$1 $2");
    spaced
        .split(|c: char| !c.is_alphabetic() && c != '\'')
        .map(|w| w.trim_matches('\'').to_lowercase())
        .map(|w| w.strip_suffix("'s").map(str::to_string).unwrap_or(w))
        .filter(|w| w.len() > 1 && !STOP_WORDS.contains(&w.as_str()))
        .map(|w| stemmer.stem(&w).into_owned())
        .collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Scores rendered texts against the bundle's fact table and the question.
/// Empty denominators score 1.
pub fn score_synthesis(texts: &Explanations, bundle: &ContextBundle, question: &str) -> SynthesisScores {
    let joined = format!("{}\n{}", texts.subset_text, texts.explainer_text);
    let tokens = numeric_tokens(&joined);
    let token_set: BTreeSet<&str> = tokens.iter().map(String::as_str).collect();
    let fact_values: BTreeSet<String> = bundle.fact_table.iter().map(|f| fmt_num(f.value)).collect();

    let used = bundle.fact_table.iter().filter(|f| token_set.contains(fmt_num(f.value).as_str())).count();
    let grounded = tokens.iter().filter(|t| fact_values.contains(t.as_str())).count();

    let q = content_stems(question);
    let t = content_stems(&joined);
    let shared = q.intersection(&t).count();

    SynthesisScores {
        answer_relevance: ratio(shared, q.len()),
        faithfulness: ratio(grounded, tokens.len()),
        context_utilization: ratio(used, bundle.fact_table.len()),
        method_note: METHOD_NOTE.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_skip_identifiers() {
        assert_eq!(numeric_tokens("BMI 32.25, label = 0, x2 and -0.0312."), vec!["32.25", "0", "-0.0312"]);
    }

    #[test]
    fn stems_drop_stop_words_and_split_camel_case() {
        let s = content_stems("Why does the patient's BloodPressure matter?");
        assert!(s.contains("blood") && s.contains("pressur") && s.contains("matter"));
        assert!(!s.contains("whi") && !s.contains("the"));
    }
}
