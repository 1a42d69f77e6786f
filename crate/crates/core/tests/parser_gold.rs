use std::path::PathBuf;

use xplain_core::decompose::{
    evaluate_parser, load_gold, parse_machine_interpretation, ParsedFields, QuestionParser,
    DEFAULT_LEVENSHTEIN_THRESHOLD, PARSER_FIELDS,
};
use xplain_core::ingest::DatasetSchema;
use xplain_core::registry::{ExplanationType, Registry};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn parser() -> QuestionParser {
    let schema = DatasetSchema::load(data("pima_schema.json")).unwrap();
    QuestionParser::new(&schema, &Registry::builtin())
}

#[test]
fn corpus_shape() {
    let gold = load_gold(data("gold_questions.jsonl")).unwrap();
    assert!(gold.len() >= 100);
    for t in [
        ExplanationType::CaseBased,
        ExplanationType::Contrastive,
        ExplanationType::Counterfactual,
        ExplanationType::Data,
        ExplanationType::Rationale,
        ExplanationType::Contextual,
    ] {
        assert!(gold.iter().any(|g| g.explanation_type == t), "{t} missing");
    }
    assert!(gold.iter().any(|g| g.machine_interpretation.ends_with("(Diabetes)")));
}

#[test]
fn gold_interpretations_round_trip() {
    let schema = DatasetSchema::load(data("pima_schema.json")).unwrap();
    for g in load_gold(data("gold_questions.jsonl")).unwrap() {
        let mi = parse_machine_interpretation(&g.machine_interpretation, &schema).unwrap();
        assert_eq!(mi.predicate, g.machine_interpretation, "gold annotation is not canonical");
        assert_eq!(parse_machine_interpretation(&mi.predicate, &schema).unwrap(), mi);
    }
}

#[test]
fn parser_meets_gold_corpus() {
    let gold = load_gold(data("gold_questions.jsonl")).unwrap();
    let p = parser();
    let report = evaluate_parser(&gold, |q| ParsedFields::from(&p.parse(q).unwrap()), DEFAULT_LEVENSHTEIN_THRESHOLD).unwrap();
    for m in &report.mismatches {
        eprintln!("{} | {}: gold `{}` got `{}`", m.question, m.field, m.gold, m.predicted);
    }
    for f in PARSER_FIELDS {
        let s = &report.per_field[f];
        assert!(s.exact.f1 >= 0.95, "{f}: exact F1 {}", s.exact.f1);
        assert!(s.exact.f1 <= s.levenshtein.f1);
    }
    assert!(report.type_accuracy >= 0.95, "type accuracy {}", report.type_accuracy);
}

#[test]
fn classification_is_order_independent() {
    let gold = load_gold(data("gold_questions.jsonl")).unwrap();
    let p = parser();
    let forward: Vec<_> = gold.iter().map(|g| p.classify(&g.question)).collect();
    let mut backward: Vec<_> = gold.iter().rev().map(|g| p.classify(&g.question)).collect();
    backward.reverse();
    assert_eq!(forward, backward);
    let again: Vec<_> = gold.iter().map(|g| p.parse(&g.question).unwrap()).collect();
    let twice: Vec<_> = gold.iter().map(|g| p.parse(&g.question).unwrap()).collect();
    assert_eq!(again, twice);
}
