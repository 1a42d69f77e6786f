use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::explainers::{CounterfactualConfig, ProtodashConfig, RuleConfig, ShapConfig};
use crate::models::{ForestConfig, LogisticConfig, ModelKind, TreeConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelChoice {
    /// Highest weighted F1 on the held-out split.
    Best,
    Lr,
    Dt,
    Rf,
}

impl ModelChoice {
    pub fn kind(self) -> Option<ModelKind> {
        match self {
            ModelChoice::Best => None,
            ModelChoice::Lr => Some(ModelKind::LogisticRegression),
            ModelChoice::Dt => Some(ModelKind::DecisionTree),
            ModelChoice::Rf => Some(ModelKind::RandomForest),
        }
    }
}

impl std::str::FromStr for ModelChoice {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "best" => Ok(ModelChoice::Best),
            "lr" => Ok(ModelChoice::Lr),
            "dt" => Ok(ModelChoice::Dt),
            "rf" => Ok(ModelChoice::Rf),
            other => Err(format!("unknown model {other:?}; expected best, lr, dt or rf")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub split: u64,
    pub model: u64,
    pub explainer: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds { split: 7, model: 7, explainer: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct ExplainerSettings {
    pub shap: ShapConfig,
    pub protodash: ProtodashConfig,
    pub counterfactual: CounterfactualConfig,
    pub rules: RuleConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub dataset_path: PathBuf,
    pub schema_path: PathBuf,
    /// `None` uses the registry compiled into the binary.
    pub registry_path: Option<PathBuf>,
    pub gold_path: PathBuf,
    pub store_root: PathBuf,
    pub port: u16,
    pub test_fraction: f64,
    pub seeds: Seeds,
    pub model: ModelChoice,
    pub logistic: LogisticConfig,
    pub tree: TreeConfig,
    pub forest: ForestConfig,
    pub explainers: ExplainerSettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset_path: "data/diabetes.csv".into(),
            schema_path: "data/pima_schema.json".into(),
            registry_path: None,
            gold_path: "data/gold_questions.jsonl".into(),
            store_root: "store".into(),
            port: 8080,
            test_fraction: 0.2,
            seeds: Seeds::default(),
            model: ModelChoice::Best,
            logistic: LogisticConfig::default(),
            tree: TreeConfig::default(),
            forest: ForestConfig::default(),
            explainers: ExplainerSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_against(dir);
        }
        Ok(cfg)
    }

    pub fn resolve_against(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        fix(&mut self.dataset_path);
        fix(&mut self.schema_path);
        fix(&mut self.gold_path);
        fix(&mut self.store_root);
        if let Some(r) = self.registry_path.as_mut() {
            fix(r);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_config_fills_defaults_and_resolves_paths() {
        let mut cfg = PipelineConfig::from_json(r#"{"port": 9000, "seeds": {"split": 3}}"#).unwrap();
        assert_eq!(cfg.port, 9000);
        assert_eq!(cfg.seeds.split, 3);
        assert_eq!(cfg.seeds.model, 7);
        cfg.resolve_against(Path::new("/opt/x"));
        assert_eq!(cfg.dataset_path, PathBuf::from("/opt/x/data/diabetes.csv"));
        assert!(PipelineConfig::from_json("{\"port\": \"no\"}").is_err());
        assert_eq!("RF".parse::<ModelChoice>().unwrap(), ModelChoice::Rf);
    }
}
