//! Canonical text form of a machine interpretation:
//!
//! ```text
//! Head '(' Target (',' Item)* ')'
//! Item := Feature Op Number | Feature 'in' '[' Number ',' Number ']' | Feature '->' Number
//! Op   := '=' | '<' | '<=' | '>' | '>='
//! ```
//!
//! Constraints are written in schema order followed by proposed changes.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DecomposeError;
use crate::ingest::{ConstraintOp, DatasetSchema, FeatureConstraint};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposedChange {
    pub feature: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineInterpretation {
    /// Canonical serialized form.
    pub predicate: String,
    pub head: String,
    pub target_label: String,
    pub constraints: Vec<FeatureConstraint>,
    pub proposed_changes: Vec<ProposedChange>,
}

fn op_rank(op: ConstraintOp) -> u8 {
    match op {
        ConstraintOp::Eq => 0,
        ConstraintOp::Range => 1,
        ConstraintOp::Gt => 2,
        ConstraintOp::Ge => 3,
        ConstraintOp::Lt => 4,
        ConstraintOp::Le => 5,
    }
}

impl MachineInterpretation {
    /// Builds an interpretation with canonical names, ordering and tolerances.
    pub fn new(
        head: impl Into<String>,
        target_label: impl Into<String>,
        mut constraints: Vec<FeatureConstraint>,
        mut proposed_changes: Vec<ProposedChange>,
        schema: &DatasetSchema,
    ) -> Result<Self, DecomposeError> {
        let index = |name: &str| schema.resolve(name).ok_or_else(|| DecomposeError::UnknownFeature(name.to_string()));
        for c in &mut constraints {
            let j = index(&c.feature)?;
            c.feature = schema.feature_names[j].clone();
            c.tolerance = schema.eq_tolerance[j];
            if c.op != ConstraintOp::Range {
                c.high = None;
            }
        }
        for p in &mut proposed_changes {
            p.feature = schema.feature_names[index(&p.feature)?].clone();
        }
        constraints.sort_by(|a, b| {
            let ka = (schema.resolve(&a.feature), op_rank(a.op));
            let kb = (schema.resolve(&b.feature), op_rank(b.op));
            ka.cmp(&kb)
                .then(a.value.total_cmp(&b.value))
                .then(a.high.unwrap_or(0.0).total_cmp(&b.high.unwrap_or(0.0)))
        });
        constraints.dedup();
        proposed_changes.sort_by(|a, b| {
            schema.resolve(&a.feature).cmp(&schema.resolve(&b.feature)).then(a.value.total_cmp(&b.value))
        });
        proposed_changes.dedup();
        let mut mi = MachineInterpretation {
            predicate: String::new(),
            head: head.into(),
            target_label: target_label.into(),
            constraints,
            proposed_changes,
        };
        mi.predicate = mi.to_string();
        Ok(mi)
    }
}

impl fmt::Display for MachineInterpretation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}", self.head, self.target_label)?;
        for c in &self.constraints {
            write!(f, ", {c}")?;
        }
        for p in &self.proposed_changes {
            write!(f, ", {} -> {}", p.feature, p.value)?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Num(f64),
    Sym(&'static str),
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, DecomposeError> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut out = Vec::new();
    let mut i = 0;
    let grammar = |position: usize, message: String| DecomposeError::GrammarError { position, message };
    while i < chars.len() {
        let (pos, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let next = chars.get(i + 1).map(|&(_, c)| c);
        let two = match (c, next) {
            ('<', Some('=')) => Some("<="),
            ('>', Some('=')) => Some(">="),
            ('-', Some('>')) => Some("->"),
            _ => None,
        };
        if let Some(sym) = two {
            out.push((pos, Tok::Sym(sym)));
            i += 2;
            continue;
        }
        let one = match c {
            '(' => Some("("),
            ')' => Some(")"),
            ',' => Some(","),
            '[' => Some("["),
            ']' => Some("]"),
            '=' => Some("="),
            '<' => Some("<"),
            '>' => Some(">"),
            _ => None,
        };
        if let Some(sym) = one {
            out.push((pos, Tok::Sym(sym)));
            i += 1;
            continue;
        }
        let starts_number = c.is_ascii_digit()
            || ((c == '-' || c == '+' || c == '.') && next.is_some_and(|n| n.is_ascii_digit() || n == '.'));
        if starts_number {
            let mut j = i + 1;
            while j < chars.len() {
                let d = chars[j].1;
                let exp_sign = (d == '-' || d == '+') && matches!(chars[j - 1].1, 'e' | 'E');
                if d.is_ascii_digit() || d == '.' || d == 'e' || d == 'E' || exp_sign {
                    j += 1;
                } else {
                    break;
                }
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            let lit = &text[pos..end];
            let v: f64 = lit.parse().map_err(|_| grammar(pos, format!("bad number `{lit}`")))?;
            if !v.is_finite() {
                return Err(grammar(pos, format!("non-finite number `{lit}`")));
            }
            out.push((pos, Tok::Num(v)));
            i = j;
            continue;
        }
        if c.is_alphabetic() || c == '_' {
            let mut j = i + 1;
            while j < chars.len() && (chars[j].1.is_alphanumeric() || chars[j].1 == '_') {
                j += 1;
            }
            let end = chars.get(j).map_or(text.len(), |&(p, _)| p);
            out.push((pos, Tok::Word(text[pos..end].to_string())));
            i = j;
            continue;
        }
        return Err(grammar(pos, format!("unexpected character `{c}`")));
    }
    Ok(out)
}

struct Cursor {
    toks: Vec<(usize, Tok)>,
    at: usize,
    end: usize,
}

impl Cursor {
    fn pos(&self) -> usize {
        self.toks.get(self.at).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|t| &t.1)
    }

    fn err(&self, message: impl Into<String>) -> DecomposeError {
        DecomposeError::GrammarError { position: self.pos(), message: message.into() }
    }

    fn sym(&mut self, s: &'static str) -> Result<(), DecomposeError> {
        match self.peek() {
            Some(Tok::Sym(x)) if *x == s => {
                self.at += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected `{s}`"))),
        }
    }

    fn word(&mut self) -> Result<String, DecomposeError> {
        match self.peek() {
            Some(Tok::Word(w)) => {
                let w = w.clone();
                self.at += 1;
                Ok(w)
            }
            _ => Err(self.err("expected a name")),
        }
    }

    fn num(&mut self) -> Result<f64, DecomposeError> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.at += 1;
                Ok(v)
            }
            _ => Err(self.err("expected a number")),
        }
    }
}

/// Parses the canonical text form, resolving aliases to canonical features.
pub fn parse_machine_interpretation(text: &str, schema: &DatasetSchema) -> Result<MachineInterpretation, DecomposeError> {
    let mut cur = Cursor { toks: tokenize(text)?, at: 0, end: text.len() };
    let head = cur.word()?;
    cur.sym("(")?;
    let target = cur.word()?;
    let mut constraints = Vec::new();
    let mut changes = Vec::new();
    loop {
        match cur.peek() {
            Some(Tok::Sym(")")) => {
                cur.at += 1;
                break;
            }
            Some(Tok::Sym(",")) => cur.at += 1,
            _ => return Err(cur.err("expected `,` or `)`")),
        }
        let mut words = vec![cur.word()?];
        while let Some(Tok::Word(w)) = cur.peek() {
            if w == "in" {
                break;
            }
            words.push(w.clone());
            cur.at += 1;
        }
        let feature = words.join(" ");
        let canonical = schema
            .canonical(&feature)
            .ok_or_else(|| DecomposeError::UnknownFeature(feature.clone()))?
            .to_string();
        let op = match cur.peek() {
            Some(Tok::Word(w)) if w == "in" => "in",
            Some(Tok::Sym(s)) => s,
            _ => return Err(cur.err("expected an operator")),
        };
        cur.at += 1;
        match op {
            "in" => {
                cur.sym("[")?;
                let lo = cur.num()?;
                cur.sym(",")?;
                let hi = cur.num()?;
                cur.sym("]")?;
                if lo > hi {
                    return Err(cur.err("range bounds out of order"));
                }
                constraints.push(FeatureConstraint::range(canonical, lo, hi));
            }
            "->" => changes.push(ProposedChange { feature: canonical, value: cur.num()? }),
            s => {
                let op = match s {
                    "=" => ConstraintOp::Eq,
                    "<" => ConstraintOp::Lt,
                    "<=" => ConstraintOp::Le,
                    ">" => ConstraintOp::Gt,
                    ">=" => ConstraintOp::Ge,
                    other => return Err(cur.err(format!("unexpected `{other}`"))),
                };
                constraints.push(FeatureConstraint::new(canonical, op, cur.num()?));
            }
        }
    }
    if cur.peek().is_some() {
        return Err(cur.err("trailing input"));
    }
    MachineInterpretation::new(head, target, constraints, changes, schema)
}
