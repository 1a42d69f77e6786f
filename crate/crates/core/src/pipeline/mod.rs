//! End-to-end orchestration: decompose, delegate, metrics and synthesis,
//! with every stage reading the previous stage's files from the run store.

mod config;
mod eval;
mod store;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{ExplainerSettings, ModelChoice, PipelineConfig, Seeds};
pub use eval::{
    run_stage_eval, DelegateReport, DelegateRow, EvalStage, StageReport, SynthesisReport, SynthesisRow,
    SynthesisSummary,
};
pub use store::{write_atomic, RunIndexEntry, RunStore, StoreError, RECORD_FILE};

use crate::decompose::{DecomposeError, QuestionParser, ReframedQuestion};
use crate::explainers::{
    extract_rules, genetic_cf, kernel_shap, protodash, ExplainerError, ExplainerOutput, OutputSidecar, Payload,
    TableError, GENETIC_CF, KERNEL_SHAP, PROTODASH, SURROGATE_RULES,
};
use crate::ingest::{
    filter_subset, impute_medians, load_dataset, split, ConstraintOp, Dataset, DatasetSchema, IngestError,
    SubsetSummary,
};
use crate::metrics::{compute_metric, MetricReport};
use crate::models::{
    evaluate, select_best, train_forest, train_logistic, train_tree, ModelError, ModelKind, ModelMetrics,
    Predictor, TrainedModel,
};
use crate::registry::{load_registry, ExplanationType, Modality, Registry, RegistryError};
use crate::synthesis::{
    render_explanation, retrieve_context, score_synthesis, subset_text, ContextBundle, Explanations, Fact,
    SynthesisScores,
};

pub const PIPELINE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Decompose,
    Delegate,
    Metrics,
    Synthesis,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Decompose => "decompose",
            Stage::Delegate => "delegate",
            Stage::Metrics => "metrics",
            Stage::Synthesis => "synthesis",
        })
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid question: {0}")]
    Question(#[from] DecomposeError),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, message: String },
    #[error("missing fixture: {0}")]
    MissingFixture(String),
}

fn stage_err(stage: Stage) -> impl Fn(&dyn fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Something that went wrong inside a stage without aborting the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub explainer_id: Option<String>,
    pub metric: Option<String>,
    pub message: String,
}

/// Where one explainer output lives inside the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputRef {
    pub explainer_id: String,
    pub modality: Modality,
    pub table: String,
    pub sidecar: String,
}

/// Persisted summary of the delegate stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegateManifest {
    pub explanation_type: ExplanationType,
    pub supported: bool,
    pub explainer_ids: Vec<String>,
    pub outputs: Vec<OutputRef>,
    pub failures: Vec<StageFailure>,
    pub instance: Option<Vec<f64>>,
    pub model_kind: ModelKind,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    pub reports: Vec<MetricReport>,
    pub failures: Vec<StageFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisFile {
    pub subset_summary: SubsetSummary,
    pub fact_table: Vec<Fact>,
    pub scores: SynthesisScores,
    pub failures: Vec<StageFailure>,
}

/// Everything one question produced, as stored in `record.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationRecord {
    pub run_id: String,
    pub uq: String,
    pub rq: ReframedQuestion,
    pub explanation_type: ExplanationType,
    pub supported: bool,
    pub explainer_ids: Vec<String>,
    pub explainer_outputs: Vec<OutputRef>,
    pub metric_reports: Vec<MetricReport>,
    pub failures: Vec<StageFailure>,
    pub subset_summary: SubsetSummary,
    pub instance: Option<Vec<f64>>,
    pub model_kind: ModelKind,
    pub texts: Explanations,
    pub synthesis_scores: SynthesisScores,
    pub seed: u64,
    pub started_at: String,
    pub finished_at: String,
    pub pipeline_version: String,
}

impl ExplanationRecord {
    /// Copy with run id and timestamps blanked, for determinism checks.
    pub fn without_run_identity(&self) -> ExplanationRecord {
        ExplanationRecord {
            run_id: String::new(),
            started_at: String::new(),
            finished_at: String::new(),
            ..self.clone()
        }
    }
}

/// Result of the delegate stage before persistence.
#[derive(Debug, Clone)]
pub struct Delegation {
    pub supported: bool,
    pub explainer_ids: Vec<String>,
    pub outputs: Vec<ExplainerOutput>,
    pub failures: Vec<StageFailure>,
    pub instance: Option<Vec<f64>>,
}

/// Result of the synthesis stage before persistence.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub texts: Explanations,
    pub scores: SynthesisScores,
    pub bundle: ContextBundle,
    pub failures: Vec<StageFailure>,
}

const DECOMPOSE_FILE: &str = "decompose/rq.json";
const MANIFEST_FILE: &str = "delegate/manifest.json";
const METRICS_FILE: &str = "metrics/reports.json";
const SUBSET_TEXT_FILE: &str = "synthesis/subset.txt";
const EXPLAINER_TEXT_FILE: &str = "synthesis/explainer.txt";
const SYNTHESIS_FILE: &str = "synthesis/summary.json";

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("pipeline types serialize")
}

/// Loaded data, trained models and registry. Read-only once built, so one
/// instance can serve concurrent questions.
pub struct Pipeline {
    pub config: PipelineConfig,
    pub registry: Registry,
    /// Full dataset after median imputation.
    pub dataset: Dataset,
    pub train: Dataset,
    pub test: Dataset,
    pub candidates: Vec<(TrainedModel, ModelMetrics)>,
    pub model: TrainedModel,
    parser: QuestionParser,
    store: RunStore,
}

/// Imputed dataset plus its stratified split.
pub fn prepare_data(config: &PipelineConfig) -> Result<(Dataset, Dataset, Dataset), PipelineError> {
    let schema = DatasetSchema::load(&config.schema_path)?;
    let raw = load_dataset(&config.dataset_path, &schema)?;
    let dataset = impute_medians(&raw)?;
    let (train, test) = split(&dataset, config.test_fraction, config.seeds.split)?;
    Ok((dataset, train, test))
}

/// Trains every model family and scores each on the test split.
pub fn train_candidates(
    config: &PipelineConfig,
    train: &Dataset,
    test: &Dataset,
) -> Result<Vec<(TrainedModel, ModelMetrics)>, PipelineError> {
    let forest = crate::models::ForestConfig { seed: config.seeds.model, ..config.forest.clone() };
    let models = [
        train_logistic(train, &config.logistic)?,
        train_tree(train, &config.tree)?,
        train_forest(train, &forest)?,
    ];
    models
        .into_iter()
        .map(|m| {
            let metrics = evaluate(&m, test)?;
            Ok((m, metrics))
        })
        .collect()
}

impl Pipeline {
    pub fn build(config: PipelineConfig) -> Result<Self, PipelineError> {
        let registry = match &config.registry_path {
            Some(p) => load_registry(p)?,
            None => Registry::builtin(),
        };
        let (dataset, train, test) = prepare_data(&config)?;
        let candidates = train_candidates(&config, &train, &test)?;
        let model = match config.model.kind() {
            None => select_best(&candidates)?.clone(),
            Some(kind) => candidates
                .iter()
                .find(|(m, _)| m.kind == kind)
                .map(|(m, _)| m.clone())
                .ok_or(ModelError::NoCandidates)?,
        };
        let parser = QuestionParser::new(&dataset.schema, &registry);
        let store = RunStore::open(&config.store_root)?;
        Ok(Pipeline { config, registry, dataset, train, test, candidates, model, parser, store })
    }

    pub fn store(&self) -> &RunStore {
        &self.store
    }

    pub fn parser(&self) -> &QuestionParser {
        &self.parser
    }

    pub fn candidate(&self, kind: ModelKind) -> Option<&TrainedModel> {
        self.candidates.iter().find(|(m, _)| m.kind == kind).map(|(m, _)| m)
    }

    /// Runs all stages for one question and persists the record.
    pub fn ask(&self, question: &str, seed: Option<u64>) -> Result<ExplanationRecord, PipelineError> {
        let rq = self.parser.parse(question)?;
        let seed = seed.unwrap_or(self.config.seeds.explainer);
        let started_at = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        let (run_id, _) = self.store.create_run(question, seed)?;

        self.store.write(&run_id, DECOMPOSE_FILE, to_json(&rq).as_bytes())?;
        self.delegate_stage(&run_id, seed)?;
        self.metrics_stage(&run_id)?;
        self.synthesis_stage(&run_id)?;
        let record = self.assemble_record(&run_id, &started_at)?;
        self.store.persist(&record)?;
        Ok(record)
    }

    fn read_json<T: for<'de> Deserialize<'de>>(&self, run_id: &str, file: &str, stage: Stage) -> Result<T, PipelineError> {
        let text = self.store.read(run_id, file)?;
        serde_json::from_str(&text).map_err(|e| stage_err(stage)(&format!("{file}: {e}")))
    }

    pub fn load_rq(&self, run_id: &str) -> Result<ReframedQuestion, PipelineError> {
        self.read_json(run_id, DECOMPOSE_FILE, Stage::Decompose)
    }

    pub fn load_manifest(&self, run_id: &str) -> Result<DelegateManifest, PipelineError> {
        self.read_json(run_id, MANIFEST_FILE, Stage::Delegate)
    }

    pub fn load_metrics(&self, run_id: &str) -> Result<MetricsFile, PipelineError> {
        self.read_json(run_id, METRICS_FILE, Stage::Metrics)
    }

    pub fn load_synthesis(&self, run_id: &str) -> Result<(Explanations, SynthesisFile), PipelineError> {
        let texts = Explanations {
            subset_text: self.store.read(run_id, SUBSET_TEXT_FILE)?,
            explainer_text: self.store.read(run_id, EXPLAINER_TEXT_FILE)?,
        };
        Ok((texts, self.read_json(run_id, SYNTHESIS_FILE, Stage::Synthesis)?))
    }

    /// Rebuilds the explainer outputs from their persisted tables.
    pub fn load_outputs(&self, run_id: &str, manifest: &DelegateManifest) -> Result<Vec<ExplainerOutput>, PipelineError> {
        manifest
            .outputs
            .iter()
            .map(|r| {
                let sidecar: OutputSidecar = self.read_json(run_id, &r.sidecar, Stage::Delegate)?;
                let table = self.store.read(run_id, &r.table)?;
                ExplainerOutput::from_table(&table, &sidecar).map_err(|e: TableError| stage_err(Stage::Delegate)(&e))
            })
            .collect()
    }

    pub fn delegate_stage(&self, run_id: &str, seed: u64) -> Result<DelegateManifest, PipelineError> {
        let rq = self.load_rq(run_id)?;
        let d = self.delegate(&rq, seed)?;
        let mut refs = Vec::new();
        for out in &d.outputs {
            let table = format!("delegate/{}.csv", out.explainer_id);
            let sidecar = format!("delegate/{}.json", out.explainer_id);
            let csv = out.to_csv().map_err(|e| stage_err(Stage::Delegate)(&e))?;
            self.store.write(run_id, &table, csv.as_bytes())?;
            self.store.write(run_id, &sidecar, to_json(&out.sidecar()).as_bytes())?;
            refs.push(OutputRef { explainer_id: out.explainer_id.clone(), modality: out.modality, table, sidecar });
        }
        let manifest = DelegateManifest {
            explanation_type: rq.explanation_type,
            supported: d.supported,
            explainer_ids: d.explainer_ids,
            outputs: refs,
            failures: d.failures,
            instance: d.instance,
            model_kind: self.model.kind,
            seed,
        };
        self.store.write(run_id, MANIFEST_FILE, to_json(&manifest).as_bytes())?;
        Ok(manifest)
    }

    pub fn metrics_stage(&self, run_id: &str) -> Result<MetricsFile, PipelineError> {
        let rq = self.load_rq(run_id)?;
        let manifest = self.load_manifest(run_id)?;
        let outputs = self.load_outputs(run_id, &manifest)?;
        let (reports, failures) = self.metrics(&rq, &outputs)?;
        let file = MetricsFile { reports, failures };
        self.store.write(run_id, METRICS_FILE, to_json(&file).as_bytes())?;
        Ok(file)
    }

    pub fn synthesis_stage(&self, run_id: &str) -> Result<Explanations, PipelineError> {
        let rq = self.load_rq(run_id)?;
        let manifest = self.load_manifest(run_id)?;
        let outputs = self.load_outputs(run_id, &manifest)?;
        let s = self.synthesize(&rq, manifest.supported, outputs)?;
        self.store.write(run_id, SUBSET_TEXT_FILE, s.texts.subset_text.as_bytes())?;
        self.store.write(run_id, EXPLAINER_TEXT_FILE, s.texts.explainer_text.as_bytes())?;
        let file = SynthesisFile {
            subset_summary: s.bundle.subset_summary,
            fact_table: s.bundle.fact_table,
            scores: s.scores,
            failures: s.failures,
        };
        self.store.write(run_id, SYNTHESIS_FILE, to_json(&file).as_bytes())?;
        Ok(s.texts)
    }

    /// Builds the record purely from the run's persisted stage files.
    pub fn assemble_record(&self, run_id: &str, started_at: &str) -> Result<ExplanationRecord, PipelineError> {
        let rq = self.load_rq(run_id)?;
        let manifest = self.load_manifest(run_id)?;
        let metrics = self.load_metrics(run_id)?;
        let (texts, synthesis) = self.load_synthesis(run_id)?;
        let mut failures = manifest.failures;
        failures.extend(metrics.failures);
        failures.extend(synthesis.failures);
        Ok(ExplanationRecord {
            run_id: run_id.to_string(),
            uq: rq.question.clone(),
            explanation_type: rq.explanation_type,
            rq,
            supported: manifest.supported,
            explainer_ids: manifest.explainer_ids,
            explainer_outputs: manifest.outputs,
            metric_reports: metrics.reports,
            failures,
            subset_summary: synthesis.subset_summary,
            instance: manifest.instance,
            model_kind: manifest.model_kind,
            texts,
            synthesis_scores: synthesis.scores,
            seed: manifest.seed,
            started_at: started_at.to_string(),
            finished_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            pipeline_version: PIPELINE_VERSION.to_string(),
        })
    }

    /// The row local explainers explain: subset medians, with the
    /// question's equality values put back in place.
    pub fn instance_for(&self, rq: &ReframedQuestion, subset: &Dataset) -> Vec<f64> {
        let mut x = subset.feature_medians();
        for c in &rq.machine_interpretation.constraints {
            if c.op == ConstraintOp::Eq {
                if let Some(j) = self.dataset.schema.resolve(&c.feature) {
                    x[j] = c.value;
                }
            }
        }
        x
    }

    fn subset(&self, rq: &ReframedQuestion) -> Result<(Dataset, SubsetSummary), PipelineError> {
        filter_subset(&self.dataset, &rq.machine_interpretation.constraints).map_err(|e| stage_err(Stage::Delegate)(&e))
    }

    /// Runs every explainer the registry maps to the question's type.
    pub fn delegate(&self, rq: &ReframedQuestion, seed: u64) -> Result<Delegation, PipelineError> {
        if !self.is_supported(rq.explanation_type) {
            return Ok(Delegation {
                supported: false,
                explainer_ids: Vec::new(),
                outputs: Vec::new(),
                failures: Vec::new(),
                instance: None,
            });
        }
        let explainer_ids = self.registry.explainers_for(rq.explanation_type)?;
        let (subset, _) = self.subset(rq)?;
        let instance = self.instance_for(rq, &subset);
        let settings = &self.config.explainers;
        let mut outputs = Vec::new();
        let mut failures = Vec::new();
        for id in &explainer_ids {
            let result: Result<ExplainerOutput, ExplainerError> = match id.as_str() {
                KERNEL_SHAP => {
                    let cfg = crate::explainers::ShapConfig { seed, ..settings.shap };
                    kernel_shap(&self.model, &instance, &self.train, &cfg)
                }
                PROTODASH => {
                    let cfg = crate::explainers::ProtodashConfig {
                        seed,
                        m: settings.protodash.m.min(self.dataset.len()),
                        ..settings.protodash.clone()
                    };
                    protodash(&subset, &self.dataset, &cfg).map(|mut out| {
                        if let Payload::Samples(s) = &mut out.payload {
                            for r in &mut s.rows {
                                r.prediction = Some(self.model.predict(&r.values));
                            }
                        }
                        out
                    })
                }
                GENETIC_CF => {
                    let cfg = crate::explainers::CounterfactualConfig { seed, ..settings.counterfactual.clone() };
                    genetic_cf(&self.model, &instance, &self.train, &cfg)
                }
                SURROGATE_RULES => extract_rules(&self.model, &self.train, &settings.rules),
                other => {
                    failures.push(StageFailure {
                        stage: Stage::Delegate,
                        explainer_id: Some(other.to_string()),
                        metric: None,
                        message: "no implementation for this explainer".into(),
                    });
                    continue;
                }
            };
            match result {
                Ok(out) => outputs.push(out),
                Err(e) => failures.push(StageFailure {
                    stage: Stage::Delegate,
                    explainer_id: Some(id.clone()),
                    metric: None,
                    message: e.to_string(),
                }),
            }
        }
        Ok(Delegation { supported: true, explainer_ids, outputs, failures, instance: Some(instance) })
    }

    /// One report per registry metric of each output's modality. Metrics
    /// that cannot be computed are returned as failures instead.
    pub fn metrics(
        &self,
        rq: &ReframedQuestion,
        outputs: &[ExplainerOutput],
    ) -> Result<(Vec<MetricReport>, Vec<StageFailure>), PipelineError> {
        let (subset, _) = self.subset(rq)?;
        let mut reports = Vec::new();
        let mut failures = Vec::new();
        for out in outputs {
            for &metric in self.registry.metrics_for_modality(out.modality)? {
                match compute_metric(metric, out, &self.model, &self.train, &subset) {
                    Ok(r) => reports.push(r),
                    Err(e) => failures.push(StageFailure {
                        stage: Stage::Metrics,
                        explainer_id: Some(out.explainer_id.clone()),
                        metric: Some(metric.name().to_string()),
                        message: e.to_string(),
                    }),
                }
            }
        }
        Ok((reports, failures))
    }

    /// Types without a registry entry, such as `Unknown`, are unsupported.
    pub fn is_supported(&self, t: ExplanationType) -> bool {
        self.registry.entry(t).map(|e| e.is_supported()).unwrap_or(false)
    }

    /// Text shown instead of an explainer summary for types with no
    /// registered explainer.
    pub fn unsupported_notice(&self, t: ExplanationType) -> String {
        let supported: Vec<&str> = crate::registry::ExplanationType::ALL
            .into_iter()
            .filter(|&x| self.is_supported(x))
            .map(ExplanationType::name)
            .collect();
        let lead = match t {
            ExplanationType::Unknown => "The question did not match any known explanation type".to_string(),
            other => format!("{other} explanations are not supported: no explainer method is registered for this type"),
        };
        format!("{lead}. Supported explanation types are {}.", supported.join(", "))
    }

    pub fn synthesize(
        &self,
        rq: &ReframedQuestion,
        supported: bool,
        outputs: Vec<ExplainerOutput>,
    ) -> Result<Synthesis, PipelineError> {
        let bundle = retrieve_context(rq, &self.dataset, outputs).map_err(|e| stage_err(Stage::Synthesis)(&e))?;
        let mut failures = Vec::new();
        let texts = if !supported {
            Explanations { subset_text: subset_text(&bundle), explainer_text: self.unsupported_notice(rq.explanation_type) }
        } else {
            let rendered = self
                .registry
                .template_for(rq.explanation_type)
                .map_err(|e| e.to_string())
                .and_then(|t| render_explanation(t, &bundle).map_err(|e| e.to_string()));
            match rendered {
                Ok(texts) => texts,
                Err(message) => {
                    failures.push(StageFailure { stage: Stage::Synthesis, explainer_id: None, metric: None, message });
                    Explanations {
                        subset_text: subset_text(&bundle),
                        explainer_text: format!(
                            "No {} explanation could be rendered because the explainer output was missing or incomplete.",
                            rq.explanation_type
                        ),
                    }
                }
            }
        };
        let scores = score_synthesis(&texts, &bundle, &rq.question);
        Ok(Synthesis { texts, scores, bundle, failures })
    }

    /// Decompose, delegate and synthesize without touching the store.
    pub fn run_in_memory(&self, question: &str, seed: u64) -> Result<(ReframedQuestion, Delegation, Synthesis), PipelineError> {
        let rq = self.parser.parse(question)?;
        let d = self.delegate(&rq, seed)?;
        let s = self.synthesize(&rq, d.supported, d.outputs.clone())?;
        Ok((rq, d, s))
    }
}
