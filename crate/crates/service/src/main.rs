use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use xplain_core::ingest::{impute_medians, load_dataset, summarize_stats, DatasetSchema};
use xplain_core::pipeline::{
    prepare_data, run_stage_eval, train_candidates, write_atomic, EvalStage, ModelChoice, Pipeline,
    PipelineConfig, RunStore,
};

#[derive(Parser)]
#[command(name = "xplain", version, about = "Ask a diabetes classifier why, and get an explanation back")]
struct Cli {
    /// Pipeline config (JSON). Without one, built-in defaults relative to
    /// the working directory are used.
    #[arg(long, global = true, env = "XPLAIN_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and impute a dataset, then print its summary.
    Ingest {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
    },
    /// Train models, print their test metrics and save them to the store.
    Train {
        #[arg(long, default_value = "all")]
        model: TrainTarget,
    },
    /// Run the full pipeline for one question and print the record.
    Ask {
        question: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a stage evaluation report.
    Eval { stage: EvalTarget },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
    /// Inspect persisted runs.
    Runs {
        #[command(subcommand)]
        action: RunsAction,
    },
}

#[derive(Subcommand)]
enum RunsAction {
    List,
    Show { run_id: String },
}

#[derive(Clone, Copy, ValueEnum)]
enum TrainTarget {
    Lr,
    Dt,
    Rf,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalTarget {
    Decompose,
    Delegate,
    Synthesis,
    All,
}

fn load_config(path: Option<&PathBuf>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(PipelineConfig::default()),
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn build(config: PipelineConfig) -> Result<Pipeline> {
    Pipeline::build(config).context("building pipeline")
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut config = load_config(cli.config.as_ref())?;
    match cli.command {
        Command::Ingest { data, schema } => {
            if let Some(d) = data {
                config.dataset_path = d;
            }
            if let Some(s) = schema {
                config.schema_path = s;
            }
            let schema = DatasetSchema::load(&config.schema_path)?;
            let raw = load_dataset(&config.dataset_path, &schema)?;
            let imputed = impute_medians(&raw)?;
            let replaced: Vec<_> = schema
                .feature_names
                .iter()
                .enumerate()
                .filter(|(j, _)| schema.zero_means_missing[*j])
                .map(|(j, name)| {
                    let zeros = raw.rows.iter().filter(|r| r[j] == 0.0).count();
                    serde_json::json!({ "feature": name, "zeros_imputed": zeros })
                })
                .collect();
            print_json(&serde_json::json!({
                "rows": raw.len(),
                "features": schema.feature_names,
                "imputation": replaced,
                "summary": summarize_stats(&imputed)?,
            }))
        }
        Command::Train { model } => {
            let (_, train, test) = prepare_data(&config)?;
            let candidates = train_candidates(&config, &train, &test)?;
            let wanted = match model {
                TrainTarget::Lr => Some(ModelChoice::Lr),
                TrainTarget::Dt => Some(ModelChoice::Dt),
                TrainTarget::Rf => Some(ModelChoice::Rf),
                TrainTarget::All => None,
            }
            .and_then(ModelChoice::kind);
            let dir = config.store_root.join("models");
            let mut rows = Vec::new();
            for (m, metrics) in &candidates {
                if wanted.is_some_and(|k| k != m.kind) {
                    continue;
                }
                let path = dir.join(format!("{}.json", m.kind.short()));
                write_atomic(&path, m.to_json().as_bytes())?;
                rows.push(serde_json::json!({
                    "model": m.kind,
                    "path": path,
                    "metrics": metrics,
                }));
            }
            let selected = xplain_core::models::select_best(&candidates)?.kind;
            let report = serde_json::json!({ "models": rows, "select_best": selected });
            write_atomic(&dir.join("metrics.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
            print_json(&report)
        }
        Command::Ask { question, seed } => {
            let pipeline = build(config)?;
            let record = pipeline.ask(&question, seed)?;
            print_json(&record)
        }
        Command::Eval { stage } => {
            let pipeline = build(config)?;
            let stages: &[EvalStage] = match stage {
                EvalTarget::Decompose => &[EvalStage::Decompose],
                EvalTarget::Delegate => &[EvalStage::Delegate],
                EvalTarget::Synthesis => &[EvalStage::Synthesis],
                EvalTarget::All => &[EvalStage::Decompose, EvalStage::Delegate, EvalStage::Synthesis],
            };
            let reports = stages.iter().map(|&s| run_stage_eval(&pipeline, s)).collect::<Result<Vec<_>, _>>()?;
            if reports.len() == 1 {
                print_json(&reports[0])
            } else {
                print_json(&reports)
            }
        }
        Command::Serve { port } => {
            let port = port.unwrap_or(config.port);
            let pipeline = Arc::new(build(config)?);
            serve(pipeline, port)
        }
        Command::Runs { action } => {
            let store = RunStore::open(&config.store_root)?;
            match action {
                RunsAction::List => print_json(&store.list()?),
                RunsAction::Show { run_id } => print_json(&store.load(&run_id)?),
            }
        }
    }
}

#[tokio::main]
async fn serve(pipeline: Arc<Pipeline>, port: u16) -> Result<()> {
    let listener = match tokio::net::TcpListener::bind(("0.0.0.0", port)).await {
        Ok(l) => l,
        Err(e) if e.kind() == std::io::ErrorKind::AddrInUse => bail!("port {port} is already in use"),
        Err(e) => return Err(e).context(format!("binding port {port}")),
    };
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, xplain::router(pipeline))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
