use std::collections::BTreeSet;
use std::fmt;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::registry::ExplanationType;

/// Named content slot a template skeleton can reference as `{NAME}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Slot {
    SubsetStats,
    MatchCount,
    Rules,
    Facts,
    Foils,
    Prototypes,
    CounterfactualDeltas,
    AttributionRanking,
    ClosingGuidance,
}

impl Slot {
    pub const ALL: [Slot; 9] = [
        Slot::SubsetStats,
        Slot::MatchCount,
        Slot::Rules,
        Slot::Facts,
        Slot::Foils,
        Slot::Prototypes,
        Slot::CounterfactualDeltas,
        Slot::AttributionRanking,
        Slot::ClosingGuidance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Slot::SubsetStats => "SUBSET_STATS",
            Slot::MatchCount => "MATCH_COUNT",
            Slot::Rules => "RULES",
            Slot::Facts => "FACTS",
            Slot::Foils => "FOILS",
            Slot::Prototypes => "PROTOTYPES",
            Slot::CounterfactualDeltas => "COUNTERFACTUAL_DELTAS",
            Slot::AttributionRanking => "ATTRIBUTION_RANKING",
            Slot::ClosingGuidance => "CLOSING_GUIDANCE",
        }
    }

    pub fn from_name(name: &str) -> Option<Slot> {
        Slot::ALL.into_iter().find(|s| s.name() == name)
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Explanation-type specific text skeleton with `{SLOT}` placeholders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NLTemplate {
    pub template_id: String,
    pub explanation_type: ExplanationType,
    pub slots: Vec<Slot>,
    pub text_skeleton: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closing_guidance: Option<String>,
}

fn placeholder_re() -> Regex {
    Regex::new(r"\{([A-Za-z_]+)\}").expect("static regex")
}

impl NLTemplate {
    /// Placeholder names in skeleton order, duplicates kept.
    pub fn placeholders(&self) -> Vec<String> {
        placeholder_re()
            .captures_iter(&self.text_skeleton)
            .map(|c| c[1].to_string())
            .collect()
    }

    /// Checks that placeholders and slot descriptors agree.
    pub fn validate(&self) -> Result<(), String> {
        let declared: BTreeSet<Slot> = self.slots.iter().copied().collect();
        if declared.len() != self.slots.len() {
            return Err("duplicate slot descriptor".into());
        }
        let mut used = BTreeSet::new();
        for name in self.placeholders() {
            let slot = Slot::from_name(&name).ok_or_else(|| format!("unknown placeholder {{{name}}}"))?;
            if !declared.contains(&slot) {
                return Err(format!("placeholder {{{name}}} has no slot descriptor"));
            }
            used.insert(slot);
        }
        if let Some(unused) = declared.difference(&used).next() {
            return Err(format!("slot {unused} never appears in the skeleton"));
        }
        if self.explanation_type == ExplanationType::Contrastive
            && !(declared.contains(&Slot::Facts) && declared.contains(&Slot::Foils))
        {
            return Err("contrastive templates need FACTS and FOILS".into());
        }
        if declared.contains(&Slot::ClosingGuidance)
            && self.closing_guidance.as_deref().is_none_or(|g| g.trim().is_empty())
        {
            return Err("CLOSING_GUIDANCE slot without guidance text".into());
        }
        Ok(())
    }

    /// Substitutes each placeholder with the text produced by `fill`.
    pub fn fill<E>(&self, mut fill: impl FnMut(Slot) -> Result<String, E>) -> Result<String, E> {
        let re = placeholder_re();
        let mut out = String::with_capacity(self.text_skeleton.len() * 2);
        let mut last = 0;
        for caps in re.captures_iter(&self.text_skeleton) {
            let whole = caps.get(0).expect("group 0");
            out.push_str(&self.text_skeleton[last..whole.start()]);
            match Slot::from_name(&caps[1]) {
                Some(slot) => out.push_str(&fill(slot)?),
                None => out.push_str(whole.as_str()),
            }
            last = whole.end();
        }
        out.push_str(&self.text_skeleton[last..]);
        Ok(out)
    }
}
