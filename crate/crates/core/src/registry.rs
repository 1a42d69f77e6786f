//! File-backed mapping from explanation types to explainer methods, output
//! modalities, metrics and templates.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::synthesis::NLTemplate;

/// The default registry shipped with the crate.
pub const BUILTIN_REGISTRY: &str = include_str!("../../../data/registry.json");

/// Explainer ids with an implementation in [`crate::explainers`].
pub const IMPLEMENTED_EXPLAINERS: [&str; 4] = ["KernelShap", "Protodash", "GeneticCF", "SurrogateRules"];

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("invalid registry entry {entry}: {reason}")]
    ValidationError { entry: String, reason: String },
    #[error("entry {entry} references unknown explainer {explainer}")]
    DanglingExplainer { entry: String, explainer: String },
    #[error("explanation type {0} has no explainer mapping")]
    UnsupportedType(ExplanationType),
    #[error("unknown registry key {0}")]
    UnknownKey(String),
    #[error("registry parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExplanationType {
    CaseBased,
    Contrastive,
    Counterfactual,
    Data,
    Rationale,
    Contextual,
    Unknown,
}

impl ExplanationType {
    pub const ALL: [ExplanationType; 7] = [
        ExplanationType::CaseBased,
        ExplanationType::Contrastive,
        ExplanationType::Counterfactual,
        ExplanationType::Data,
        ExplanationType::Rationale,
        ExplanationType::Contextual,
        ExplanationType::Unknown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplanationType::CaseBased => "CaseBased",
            ExplanationType::Contrastive => "Contrastive",
            ExplanationType::Counterfactual => "Counterfactual",
            ExplanationType::Data => "Data",
            ExplanationType::Rationale => "Rationale",
            ExplanationType::Contextual => "Contextual",
            ExplanationType::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for ExplanationType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExplanationType {
    type Err = RegistryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_lowercase();
        let key = key.strip_suffix("explanation").unwrap_or(&key);
        ExplanationType::ALL
            .into_iter()
            .find(|t| t.name().to_lowercase() == key)
            .ok_or_else(|| RegistryError::UnknownKey(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Modality {
    Rules,
    Samples,
    Features,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Rules => "Rules",
            Modality::Samples => "Samples",
            Modality::Features => "Features",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DataType {
    Tabular,
    Text,
    Image,
}

/// Every metric id has an implementation in [`crate::metrics`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricId {
    Faithfulness,
    Monotonicity,
    AvgRuleLength,
    Fidelity,
    Diversity,
    NonRepresentativeness,
}

impl MetricId {
    pub fn name(self) -> &'static str {
        match self {
            MetricId::Faithfulness => "faithfulness",
            MetricId::Monotonicity => "monotonicity",
            MetricId::AvgRuleLength => "avg_rule_length",
            MetricId::Fidelity => "fidelity",
            MetricId::Diversity => "diversity",
            MetricId::NonRepresentativeness => "non_representativeness",
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerInfo {
    pub id: String,
    pub name: String,
    pub modality: Modality,
    pub data_types: Vec<DataType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub explanation_type: ExplanationType,
    pub eo_class: String,
    pub definition: String,
    /// Cue phrases in priority order; `...` separates segments that must
    /// appear in sequence.
    pub question_cues: Vec<String>,
    pub explainer_methods: Vec<String>,
    pub output_modality: Option<Modality>,
    pub metrics: Vec<MetricId>,
    pub template: Option<String>,
    pub supported_data_types: Vec<DataType>,
}

impl RegistryEntry {
    pub fn is_supported(&self) -> bool {
        !self.explainer_methods.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub version: String,
    pub explainers: Vec<ExplainerInfo>,
    /// Entries in cue-priority order.
    pub entries: Vec<RegistryEntry>,
    pub modality_metrics: BTreeMap<Modality, Vec<MetricId>>,
    pub templates: Vec<NLTemplate>,
}

impl Registry {
    pub fn from_json(text: &str) -> Result<Self, RegistryError> {
        let registry: Registry = serde_json::from_str(text)?;
        registry.validate()?;
        Ok(registry)
    }

    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_REGISTRY).expect("shipped registry validates")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn validate(&self) -> Result<(), RegistryError> {
        let invalid = |entry: &str, reason: String| RegistryError::ValidationError { entry: entry.to_string(), reason };

        if self.version.trim().is_empty() {
            return Err(invalid("registry", "version is mandatory".into()));
        }

        let mut catalog = BTreeMap::new();
        for info in &self.explainers {
            if catalog.insert(info.id.as_str(), info).is_some() {
                return Err(invalid(&info.id, "duplicate explainer id".into()));
            }
            if !IMPLEMENTED_EXPLAINERS.contains(&info.id.as_str()) {
                return Err(RegistryError::DanglingExplainer { entry: "catalog".into(), explainer: info.id.clone() });
            }
            if ExplanationType::from_str(&info.id).is_ok() {
                return Err(invalid(&info.id, "explainer id collides with an explanation type".into()));
            }
        }

        let mut templates = BTreeMap::new();
        for t in &self.templates {
            t.validate().map_err(|reason| invalid(&t.template_id, reason))?;
            if templates.insert(t.template_id.as_str(), t).is_some() {
                return Err(invalid(&t.template_id, "duplicate template id".into()));
            }
        }

        let mut seen_types = BTreeSet::new();
        let mut used_explainers = BTreeSet::new();
        for e in &self.entries {
            let name = e.explanation_type.name();
            if e.explanation_type == ExplanationType::Unknown {
                return Err(invalid(name, "Unknown cannot carry an entry".into()));
            }
            if !seen_types.insert(e.explanation_type) {
                return Err(invalid(name, "duplicate entry for explanation type".into()));
            }
            if e.explanation_type == ExplanationType::Contextual && e.is_supported() {
                return Err(invalid(name, "Contextual has no explainer mapping".into()));
            }
            if e.question_cues.iter().any(|c| c.trim().is_empty()) {
                return Err(invalid(name, "empty question cue".into()));
            }
            if !e.is_supported() {
                if e.output_modality.is_some() || !e.metrics.is_empty() || e.template.is_some() {
                    return Err(invalid(name, "unsupported entry must not declare modality, metrics or template".into()));
                }
                continue;
            }
            let modality = e
                .output_modality
                .ok_or_else(|| invalid(name, "supported entry needs an output modality".into()))?;
            let mut local = BTreeSet::new();
            for id in &e.explainer_methods {
                if !local.insert(id.as_str()) {
                    return Err(invalid(name, format!("explainer {id} listed twice")));
                }
                let info = catalog
                    .get(id.as_str())
                    .ok_or_else(|| RegistryError::DanglingExplainer { entry: name.into(), explainer: id.clone() })?;
                if info.modality != modality {
                    return Err(invalid(name, format!("explainer {id} emits {} not {modality}", info.modality)));
                }
                used_explainers.insert(id.as_str());
            }
            let allowed = self
                .modality_metrics
                .get(&modality)
                .ok_or_else(|| invalid(name, format!("no metrics declared for modality {modality}")))?;
            if e.metrics.is_empty() {
                return Err(invalid(name, "supported entry needs metrics".into()));
            }
            if let Some(m) = e.metrics.iter().find(|m| !allowed.contains(m)) {
                return Err(invalid(name, format!("metric {m} is not valid for modality {modality}")));
            }
            let tid = e.template.as_deref().ok_or_else(|| invalid(name, "supported entry needs a template".into()))?;
            let template = templates
                .get(tid)
                .ok_or_else(|| invalid(name, format!("unknown template {tid}")))?;
            if template.explanation_type != e.explanation_type {
                return Err(invalid(name, format!("template {tid} is for {}", template.explanation_type)));
            }
            if e.supported_data_types.is_empty() {
                return Err(invalid(name, "no supported data types".into()));
            }
        }

        if let Some(unused) = catalog.keys().find(|id| !used_explainers.contains(*id)) {
            return Err(invalid(unused, "explainer is not mapped to any explanation type".into()));
        }

        let mut claimed = BTreeMap::new();
        for (modality, metrics) in &self.modality_metrics {
            for m in metrics {
                if let Some(other) = claimed.insert(*m, *modality) {
                    return Err(invalid("modality_metrics", format!("{m} claimed by {other} and {modality}")));
                }
            }
        }
        Ok(())
    }

    pub fn entry(&self, t: ExplanationType) -> Result<&RegistryEntry, RegistryError> {
        self.entries
            .iter()
            .find(|e| e.explanation_type == t)
            .ok_or_else(|| RegistryError::UnknownKey(t.to_string()))
    }

    pub fn explainer(&self, id: &str) -> Result<&ExplainerInfo, RegistryError> {
        self.explainers
            .iter()
            .find(|e| e.id == id)
            .ok_or_else(|| RegistryError::UnknownKey(id.to_string()))
    }

    /// Explainers mapped to `t`, in file order.
    pub fn explainers_for(&self, t: ExplanationType) -> Result<Vec<String>, RegistryError> {
        match self.entries.iter().find(|e| e.explanation_type == t) {
            Some(e) if e.is_supported() => Ok(e.explainer_methods.clone()),
            _ => Err(RegistryError::UnsupportedType(t)),
        }
    }

    pub fn explainers_for_data_type(&self, d: DataType) -> Result<Vec<String>, RegistryError> {
        let ids: Vec<String> = self
            .explainers
            .iter()
            .filter(|e| e.data_types.contains(&d))
            .map(|e| e.id.clone())
            .collect();
        if ids.is_empty() {
            return Err(RegistryError::UnknownKey(format!("{d:?}")));
        }
        Ok(ids)
    }

    pub fn template_for(&self, t: ExplanationType) -> Result<&NLTemplate, RegistryError> {
        let entry = self.entry(t)?;
        let tid = entry.template.as_deref().ok_or(RegistryError::UnsupportedType(t))?;
        self.templates
            .iter()
            .find(|x| x.template_id == tid)
            .ok_or_else(|| RegistryError::UnknownKey(tid.to_string()))
    }

    pub fn metrics_for_modality(&self, m: Modality) -> Result<&[MetricId], RegistryError> {
        self.modality_metrics
            .get(&m)
            .map(Vec::as_slice)
            .ok_or_else(|| RegistryError::UnknownKey(m.to_string()))
    }

    /// `(type, cue)` pairs in matching priority order.
    pub fn cue_table(&self) -> Vec<(ExplanationType, &str)> {
        self.entries
            .iter()
            .flat_map(|e| e.question_cues.iter().map(move |c| (e.explanation_type, c.as_str())))
            .collect()
    }
}

pub fn load_registry(path: impl AsRef<Path>) -> Result<Registry, RegistryError> {
    Registry::from_json(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn builtin_value() -> serde_json::Value {
        serde_json::from_str(BUILTIN_REGISTRY).unwrap()
    }

    fn entry_mut<'a>(v: &'a mut serde_json::Value, t: &str) -> &'a mut serde_json::Value {
        v["entries"]
            .as_array_mut()
            .unwrap()
            .iter_mut()
            .find(|e| e["explanation_type"] == t)
            .unwrap()
    }

    #[test]
    fn builtin_has_six_entries() {
        let r = Registry::builtin();
        assert_eq!(r.entries.len(), 6);
        assert_eq!(r.entries.iter().filter(|e| e.is_supported()).count(), 5);
        assert!(!r.entry(ExplanationType::Contextual).unwrap().is_supported());
    }

    #[test]
    fn default_mappings() {
        let r = Registry::builtin();
        let cases = [
            (ExplanationType::Contrastive, "KernelShap", Modality::Features),
            (ExplanationType::CaseBased, "Protodash", Modality::Samples),
            (ExplanationType::Data, "Protodash", Modality::Samples),
            (ExplanationType::Counterfactual, "GeneticCF", Modality::Samples),
            (ExplanationType::Rationale, "SurrogateRules", Modality::Rules),
        ];
        for (t, id, m) in cases {
            assert_eq!(r.explainers_for(t).unwrap(), vec![id.to_string()]);
            assert_eq!(r.entry(t).unwrap().output_modality, Some(m));
        }
    }

    #[test]
    fn unsupported_types() {
        let r = Registry::builtin();
        for t in [ExplanationType::Contextual, ExplanationType::Unknown] {
            assert!(matches!(r.explainers_for(t), Err(RegistryError::UnsupportedType(x)) if x == t));
        }
    }

    #[test]
    fn modality_metric_lookup() {
        let r = Registry::builtin();
        use MetricId::*;
        assert_eq!(r.metrics_for_modality(Modality::Features).unwrap(), &[Faithfulness, Monotonicity]);
        assert_eq!(r.metrics_for_modality(Modality::Rules).unwrap(), &[AvgRuleLength, Fidelity]);
        assert_eq!(r.metrics_for_modality(Modality::Samples).unwrap(), &[NonRepresentativeness, Diversity]);
    }

    #[test]
    fn tabular_covers_all_explainers() {
        let r = Registry::builtin();
        let ids = r.explainers_for_data_type(DataType::Tabular).unwrap();
        assert_eq!(ids, IMPLEMENTED_EXPLAINERS.map(String::from).to_vec());
        assert!(matches!(r.explainers_for_data_type(DataType::Image), Err(RegistryError::UnknownKey(_))));
    }

    #[test]
    fn contrastive_template_has_fact_and_foil_slots() {
        let r = Registry::builtin();
        let t = r.template_for(ExplanationType::Contrastive).unwrap();
        assert!(t.text_skeleton.contains("{FACTS}"));
        assert!(t.text_skeleton.contains("{FOILS}"));
    }

    #[test]
    fn rules_metrics_on_samples_entry_rejected() {
        let mut v = builtin_value();
        entry_mut(&mut v, "CaseBased")["metrics"] = serde_json::json!(["avg_rule_length", "fidelity"]);
        let err = Registry::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, RegistryError::ValidationError { ref entry, .. } if entry == "CaseBased"), "{err}");
    }

    #[test]
    fn dangling_explainer_rejected() {
        let mut v = builtin_value();
        entry_mut(&mut v, "Rationale")["explainer_methods"] = serde_json::json!(["SurrogateRules", "FooXAI"]);
        let err = Registry::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, RegistryError::DanglingExplainer { ref explainer, .. } if explainer == "FooXAI"));
    }

    #[test]
    fn duplicate_entry_rejected() {
        let mut v = builtin_value();
        let dup = entry_mut(&mut v, "Data").clone();
        v["entries"].as_array_mut().unwrap().push(dup);
        assert!(matches!(Registry::from_json(&v.to_string()), Err(RegistryError::ValidationError { .. })));
    }

    #[test]
    fn orphan_explainer_rejected() {
        let mut v = builtin_value();
        entry_mut(&mut v, "Contrastive")["explainer_methods"] = serde_json::json!(["KernelShap"]);
        entry_mut(&mut v, "Counterfactual")["explainer_methods"] = serde_json::json!(["Protodash"]);
        let err = Registry::from_json(&v.to_string()).unwrap_err();
        assert!(err.to_string().contains("GeneticCF"), "{err}");
    }

    #[test]
    fn contextual_with_methods_rejected() {
        let mut v = builtin_value();
        entry_mut(&mut v, "Contextual")["explainer_methods"] = serde_json::json!(["Protodash"]);
        assert!(Registry::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn missing_version_rejected() {
        let mut v = builtin_value();
        v["version"] = serde_json::json!("");
        assert!(Registry::from_json(&v.to_string()).is_err());
        v.as_object_mut().unwrap().remove("version");
        assert!(matches!(Registry::from_json(&v.to_string()), Err(RegistryError::Parse(_))));
    }

    #[test]
    fn load_is_deterministic_and_round_trips() {
        let a = Registry::builtin();
        let b = Registry::from_json(BUILTIN_REGISTRY).unwrap();
        assert_eq!(a, b);
        assert_eq!(Registry::from_json(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn bipartite_ids() {
        let r = Registry::builtin();
        for e in &r.explainers {
            assert!(ExplanationType::from_str(&e.id).is_err());
        }
    }

    #[test]
    fn explanation_type_parsing_is_lenient() {
        assert_eq!("Rationale Explanation".parse::<ExplanationType>().unwrap(), ExplanationType::Rationale);
        assert_eq!("case-based".parse::<ExplanationType>().unwrap(), ExplanationType::CaseBased);
        assert!("Causal".parse::<ExplanationType>().is_err());
    }
}
