//! Command-line front door. Every subcommand is deterministic given its
//! inputs, flags, and seed; all outputs are JSON or CSV parseable by this
//! crate's own readers.
//!
//! Exit codes: 0 success, 2 input error, 3 config error, 4 lookup error.
//! Set `NAGAM_LOG=info` (or `debug`) for progress logging on stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use crate::eval::{run_experiment, render_table, EvalError, ExperimentConfig, TargetSource};
use crate::gam::{train_gam, AdditiveModel, GamCheckpoint, GamConfig};
use crate::heads::{eval_heads, train_heads, ConceptHeads, HeadsCheckpoint, HeadsConfig};
use crate::ingest::{
    consensus, load_embeddings, parse_annotations, ConceptVector, Dataset, IngestError,
};
use crate::schema::default_schema;

/// Exit status for scriptable pipelines.
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_LOOKUP: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Config(String),
    Lookup(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Lookup(_) => EXIT_LOOKUP,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Config(m) | CliError::Lookup(m) => m,
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_) => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "nagam", version, about = "Concept-based explainable malignancy scoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Inspect the concept schema
    Schema {
        #[command(subcommand)]
        action: SchemaAction,
    },
    /// Parse annotations, aggregate consensus, and write the dataset cache
    Ingest(IngestArgs),
    /// Train the additive explainer on a dataset cache
    Train(TrainArgs),
    /// Train the concept predictor heads on cached embeddings
    TrainHeads(TrainHeadsArgs),
    /// Evaluate a heads checkpoint: per-concept MAE and F1
    EvalHeads(EvalHeadsArgs),
    /// Run the cross-validated experiment protocol
    Evaluate(EvaluateArgs),
    /// Emit per-nodule contribution breakdowns
    Explain(ExplainArgs),
    /// Export per-concept shape-function grids as CSV
    Shapes(ShapesArgs),
    /// Emit per-nodule malignancy scores
    Predict(PredictArgs),
}

#[derive(Debug, Subcommand)]
pub enum SchemaAction {
    /// Print the schema as JSON
    Dump {
        /// Output path (stdout when omitted)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Annotation CSV: one row per (nodule, rater)
    #[arg(long)]
    pub annotations: PathBuf,
    /// Optional embedding CSV: nodule_id plus numeric columns
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Dataset cache output (JSON lines)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset cache from `ingest`
    #[arg(long)]
    pub dataset: PathBuf,
    /// Model checkpoint output
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-history output (defaults to the checkpoint path with a
    /// `.history.json` extension)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Subnetworks per concept
    #[arg(long, default_value_t = 4)]
    pub subnets: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Concept source fed to the explainer: consensus | predicted
    #[arg(long, default_value = "consensus")]
    pub source: TargetSource,
    /// Heads checkpoint (required with --source predicted)
    #[arg(long)]
    pub heads: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainHeadsArgs {
    /// Dataset cache with embeddings
    #[arg(long)]
    pub dataset: PathBuf,
    /// Heads checkpoint output
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-history output (defaults next to the checkpoint)
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalHeadsArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Heads checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Metrics JSON output (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Comma-separated seeds, one experiment repetition each
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    #[arg(long, default_value_t = 80)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 4)]
    pub subnets: usize,
    #[arg(long, default_value = "consensus")]
    pub source: TargetSource,
    /// Fold worker threads
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Report JSON output (stdout when omitted)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Text table output (stdout when omitted)
    #[arg(long)]
    pub table: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Additive-model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated nodule ids, explained in the given order
    #[arg(long, value_delimiter = ',', required = true)]
    pub ids: Vec<String>,
    #[arg(long, default_value = "consensus")]
    pub source: TargetSource,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Output path (stdout when omitted); one JSON object per line
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ShapesArgs {
    /// Additive-model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    /// Directory for per-concept CSV files
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Grid points for ordinal concepts
    #[arg(long, default_value_t = 64)]
    pub points: usize,
    /// Mean-center each grid before writing
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Additive-model checkpoint
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Comma-separated nodule ids (all rows when omitted)
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    #[arg(long, default_value = "consensus")]
    pub source: TargetSource,
    #[arg(long)]
    pub heads: Option<PathBuf>,
    /// Clamp emitted scores into [0, 1] for display
    #[arg(long)]
    pub clip: bool,
    /// Output path (stdout when omitted); one JSON object per line
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Dispatches a parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    log::info!("resolved invocation: {:?}", cli.command);
    match cli.command {
        Command::Schema { action } => match action {
            SchemaAction::Dump { out } => cmd_schema_dump(out.as_deref()),
        },
        Command::Ingest(args) => cmd_ingest(&args),
        Command::Train(args) => cmd_train(&args),
        Command::TrainHeads(args) => cmd_train_heads(&args),
        Command::EvalHeads(args) => cmd_eval_heads(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Explain(args) => cmd_explain(&args),
        Command::Shapes(args) => cmd_shapes(&args),
        Command::Predict(args) => cmd_predict(&args),
    }
}

fn write_output(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        Some(path) => std::fs::write(path, content)
            .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            lock.write_all(content.as_bytes())
                .map_err(|e| CliError::Input(format!("cannot write stdout: {e}")))
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("malformed {what} {}: {e}", path.display())))
}

fn pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    text
}

fn load_gam_checkpoint(path: &Path) -> Result<GamCheckpoint, CliError> {
    let ckpt: GamCheckpoint = read_json(path, "model checkpoint")?;
    ckpt.verify()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

fn load_heads_checkpoint(path: &Path) -> Result<HeadsCheckpoint, CliError> {
    let ckpt: HeadsCheckpoint = read_json(path, "heads checkpoint")?;
    ckpt.verify()
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(ckpt)
}

/// Concept vectors fed to the explainer, either straight consensus rows or
/// head predictions over the cached embeddings (consensus targets kept).
fn rows_for_source(
    dataset: &Dataset,
    source: TargetSource,
    heads_path: Option<&Path>,
) -> Result<Vec<ConceptVector>, CliError> {
    match source {
        TargetSource::Consensus => Ok(dataset.rows.clone()),
        TargetSource::Predicted => {
            let heads_path = heads_path.ok_or_else(|| {
                CliError::Config("--source predicted requires --heads <checkpoint>".into())
            })?;
            let heads: ConceptHeads = load_heads_checkpoint(heads_path)?.model;
            if dataset.embeddings.is_none() {
                return Err(CliError::Config(
                    "--source predicted requires a dataset cache with embeddings".into(),
                ));
            }
            dataset
                .rows
                .iter()
                .map(|row| {
                    let embedding = dataset.embedding_of(&row.nodule_id).ok_or_else(|| {
                        CliError::Input(format!("embedding missing for '{}'", row.nodule_id))
                    })?;
                    let mut v = heads
                        .predict_vector(&row.nodule_id, embedding)
                        .map_err(|e| CliError::Input(e.to_string()))?;
                    v.malignancy_target = row.malignancy_target;
                    v.n_raters = row.n_raters;
                    Ok(v)
                })
                .collect()
        }
    }
}

/// Selects rows by requested id, preserving request order. Unknown ids are
/// returned separately; it is the caller's policy whether that is fatal.
fn select_rows<'a>(
    rows: &'a [ConceptVector],
    ids: &[String],
) -> (Vec<&'a ConceptVector>, Vec<String>) {
    let mut found = Vec::new();
    let mut unknown = Vec::new();
    for id in ids {
        match rows.iter().find(|r| &r.nodule_id == id) {
            Some(row) => found.push(row),
            None => unknown.push(id.clone()),
        }
    }
    (found, unknown)
}

fn cmd_schema_dump(out: Option<&Path>) -> Result<(), CliError> {
    write_output(out, &pretty_json(&default_schema()))
}

fn cmd_ingest(args: &IngestArgs) -> Result<(), CliError> {
    let schema = default_schema();
    let records = parse_annotations(&args.annotations, &schema)?;
    let rows = consensus(&records, &schema)
        .map_err(|e| CliError::Input(format!("consensus failed: {e}")))?;
    let mut dataset = Dataset::new(schema, rows);
    if let Some(embeddings_path) = &args.embeddings {
        let embeddings = load_embeddings(embeddings_path)?;
        dataset.attach_embeddings(embeddings)?;
    }
    dataset.save_jsonl(&args.out)?;
    println!(
        "wrote {} nodules ({} rater rows) to {}{}",
        dataset.rows.len(),
        records.len(),
        args.out.display(),
        match dataset.embedding_dim() {
            Some(d) => format!("; embedding dim {d}"),
            None => String::new(),
        }
    );
    Ok(())
}

fn default_history_path(out: &Path) -> PathBuf {
    out.with_extension("history.json")
}

#[derive(Serialize)]
struct HistoryFile<'a> {
    seed: u64,
    epochs: &'a [crate::optim::EpochStats],
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    if args.epochs > 0 && (args.lr <= 0.0 || args.batch_size == 0 || args.subnets == 0) {
        return Err(CliError::Config(
            "epochs, batch-size, lr, and subnets must be positive".into(),
        ));
    }
    if args.subnets == 0 {
        return Err(CliError::Config("subnets must be positive".into()));
    }
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    let rows = rows_for_source(&dataset, args.source, args.heads.as_deref())?;
    let config = GamConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_lr: args.lr,
        subnets_per_concept: args.subnets,
        seed: args.seed,
        ..GamConfig::default()
    };
    let outcome = train_gam(&rows, &dataset.schema, &config)
        .map_err(|e| CliError::Input(e.to_string()))?;
    let checkpoint = GamCheckpoint::new(outcome.model, args.seed, Some(outcome.optimizer));
    write_output(Some(&args.out), &pretty_json(&checkpoint))?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| default_history_path(&args.out));
    write_output(
        Some(&history_path),
        &pretty_json(&HistoryFile {
            seed: args.seed,
            epochs: &outcome.history,
        }),
    )?;
    println!(
        "trained explainer on {} rows for {} epochs (seed {}); checkpoint {}",
        rows.len(),
        args.epochs,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_train_heads(args: &TrainHeadsArgs) -> Result<(), CliError> {
    if args.epochs > 0 && (args.lr <= 0.0 || args.batch_size == 0) {
        return Err(CliError::Config("batch-size and lr must be positive".into()));
    }
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    if dataset.embeddings.is_none() {
        return Err(CliError::Config(
            "heads training needs a dataset cache with embeddings".into(),
        ));
    }
    let config = HeadsConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_lr: args.lr,
        seed: args.seed,
        ..HeadsConfig::default()
    };
    let outcome = train_heads(&dataset, &config).map_err(|e| CliError::Input(e.to_string()))?;
    let checkpoint = HeadsCheckpoint::new(outcome.model, args.seed, Some(outcome.optimizer));
    write_output(Some(&args.out), &pretty_json(&checkpoint))?;
    let history_path = args
        .history
        .clone()
        .unwrap_or_else(|| default_history_path(&args.out));
    write_output(
        Some(&history_path),
        &pretty_json(&HistoryFile {
            seed: args.seed,
            epochs: &outcome.history,
        }),
    )?;
    println!(
        "trained heads on {} rows for {} epochs (seed {}); checkpoint {}",
        dataset.rows.len(),
        args.epochs,
        args.seed,
        args.out.display()
    );
    Ok(())
}

fn cmd_eval_heads(args: &EvalHeadsArgs) -> Result<(), CliError> {
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    let checkpoint = load_heads_checkpoint(&args.model)?;
    let metrics = eval_heads(&checkpoint.model, &dataset)
        .map_err(|e| CliError::Input(e.to_string()))?;
    write_output(args.out.as_deref(), &pretty_json(&metrics))
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    let config = ExperimentConfig {
        seeds: args.seeds.clone(),
        k: args.k,
        epochs: args.epochs,
        batch_size: args.batch_size,
        base_lr: args.lr,
        subnets_per_concept: args.subnets,
        train_target_source: args.source,
        jobs: args.jobs,
    };
    let report = run_experiment(&dataset, &config)?;
    write_output(args.out.as_deref(), &pretty_json(&report))?;
    write_output(args.table.as_deref(), &render_table(&report))?;
    Ok(())
}

#[derive(Serialize)]
struct ExplainConcept {
    concept: String,
    input: Value,
    contribution: f64,
}

#[derive(Serialize)]
struct ExplainLine {
    nodule_id: String,
    prediction: f64,
    bias: f64,
    concepts: Vec<ExplainConcept>,
}

fn explain_line(model: &AdditiveModel, row: &ConceptVector) -> Result<ExplainLine, CliError> {
    let explanation = model.predict(row).map_err(|e| CliError::Input(e.to_string()))?;
    let schema = model.schema();
    let mut concepts = Vec::with_capacity(explanation.contributions.len());
    for contribution in &explanation.contributions {
        let input = if let Some(idx) = schema
            .ordinals
            .iter()
            .position(|c| c.name == contribution.concept)
        {
            Value::from(row.ordinal_values[idx])
        } else {
            let idx = schema
                .categoricals
                .iter()
                .position(|c| c.name == contribution.concept)
                .expect("contribution concept exists in schema");
            let block = &row.categorical_onehots[idx];
            let class = block
                .iter()
                .position(|&v| v == 1.0)
                .map(|i| schema.categoricals[idx].classes[i].clone())
                .unwrap_or_default();
            Value::from(class)
        };
        concepts.push(ExplainConcept {
            concept: contribution.concept.clone(),
            input,
            contribution: contribution.contribution,
        });
    }
    Ok(ExplainLine {
        nodule_id: explanation.nodule_id,
        prediction: explanation.predicted_malignancy,
        bias: explanation.bias,
        concepts,
    })
}

/// Resolves requested ids against the rows, enforcing the lookup policy:
/// all unknown is fatal (exit 4), partially unknown is a warning.
fn resolve_ids<'a>(
    rows: &'a [ConceptVector],
    ids: &[String],
) -> Result<Vec<&'a ConceptVector>, CliError> {
    let (found, unknown) = select_rows(rows, ids);
    if found.is_empty() && !unknown.is_empty() {
        return Err(CliError::Lookup(format!(
            "unknown nodule ids: {}",
            unknown.join(", ")
        )));
    }
    if !unknown.is_empty() {
        eprintln!("warning: unknown nodule ids skipped: {}", unknown.join(", "));
    }
    Ok(found)
}

fn cmd_explain(args: &ExplainArgs) -> Result<(), CliError> {
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    let checkpoint = load_gam_checkpoint(&args.model)?;
    let rows = rows_for_source(&dataset, args.source, args.heads.as_deref())?;
    let selected = resolve_ids(&rows, &args.ids)?;
    let mut out = String::new();
    for row in selected {
        let line = explain_line(&checkpoint.model, row)?;
        out.push_str(&serde_json::to_string(&line).expect("explain line serializes"));
        out.push('\n');
    }
    write_output(args.out.as_deref(), &out)
}

fn cmd_shapes(args: &ShapesArgs) -> Result<(), CliError> {
    let checkpoint = load_gam_checkpoint(&args.model)?;
    let grids = checkpoint
        .model
        .all_shape_grids(args.points)
        .map_err(|e| CliError::Config(e.to_string()))?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", args.out_dir.display())))?;
    for grid in grids {
        let path = args.out_dir.join(format!("{}.csv", grid.concept()));
        write_output(Some(&path), &grid.to_csv(args.center))?;
    }
    println!(
        "wrote {} shape grids to {}",
        checkpoint.model.schema().concept_names().len(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct PredictLine {
    nodule_id: String,
    malignancy: f64,
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let dataset = Dataset::load_jsonl(&args.dataset)?;
    let checkpoint = load_gam_checkpoint(&args.model)?;
    let rows = rows_for_source(&dataset, args.source, args.heads.as_deref())?;
    let selected: Vec<&ConceptVector> = match &args.ids {
        Some(ids) => resolve_ids(&rows, ids)?,
        None => rows.iter().collect(),
    };
    let mut out = String::new();
    for row in selected {
        let explanation = checkpoint
            .model
            .predict(row)
            .map_err(|e| CliError::Input(e.to_string()))?;
        let malignancy = if args.clip {
            explanation.predicted_malignancy.clamp(0.0, 1.0)
        } else {
            explanation.predicted_malignancy
        };
        let line = PredictLine {
            nodule_id: explanation.nodule_id,
            malignancy,
        };
        out.push_str(&serde_json::to_string(&line).expect("predict line serializes"));
        out.push('\n');
    }
    write_output(args.out.as_deref(), &out)
}
