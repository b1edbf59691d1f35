//! Command-line entry point: stage-wise subcommands over a run directory
//! plus standalone transform/evaluate utilities.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 stage
//! failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use saft_core::dsl::{self, CrossSequence};
use saft_core::eval::{train_eval, DownstreamModelSpec, EvalProtocol, ModelKind};
use saft_core::pipeline::{
    self, thread_cap, PipelineConfig, RunDirectory,
};
use saft_core::tabular::{load_table, Table, TaskKind};
use saft_core::SaftError;

#[derive(Parser)]
#[command(name = "saft", about = "Shift-aware feature transformation engine")]
struct Cli {
    /// pipeline configuration JSON
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// run directory for stage artifacts
    #[arg(long, global = true, default_value = "saft-run")]
    out: PathBuf,

    /// master seed; overrides the config's seed and everything derived
    /// from it
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// print progress to standard error
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shift-aware train/test split with train-fit normalization
    Split,
    /// Reinforcement-learning corpus collection
    Collect(CollectArgs),
    /// Bilevel encoder/evaluator/decoder training
    Train,
    /// Flatness-aware candidate generation from the checkpoint
    Generate,
    /// Apply a cross sequence to tables
    Transform(TransformArgs),
    /// Score raw vs transformed features with the downstream model
    Evaluate(EvaluateArgs),
    /// Run every stage in order
    Pipeline,
}

#[derive(Args)]
struct CollectArgs {
    /// override the number of collection episodes
    #[arg(long)]
    episodes: Option<usize>,
    /// override the steps per episode
    #[arg(long)]
    steps: Option<usize>,
    /// override the kept-corpus size cap
    #[arg(long)]
    cap: Option<usize>,
}

#[derive(Args)]
struct TransformArgs {
    /// standalone mode: sequence file to apply (one-line DSL) instead of
    /// the generate stage's best sequence
    #[arg(long)]
    sequence: Option<PathBuf>,
    /// standalone mode: input CSV
    #[arg(long, requires = "sequence")]
    data: Option<PathBuf>,
    /// standalone mode: output CSV
    #[arg(long, requires = "data")]
    output: Option<PathBuf>,
    /// target column name for standalone mode
    #[arg(long, default_value = "target")]
    target: String,
    /// task kind for standalone mode
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    task: TaskArg,
}

#[derive(Args)]
struct EvaluateArgs {
    /// standalone mode: feature/target CSV to score instead of the run
    /// directory's split
    #[arg(long)]
    data: Option<PathBuf>,
    /// target column name for standalone mode
    #[arg(long, default_value = "target")]
    target: String,
    /// task kind for standalone mode
    #[arg(long, value_enum, default_value_t = TaskArg::Regression)]
    task: TaskArg,
    /// fit and score on the same rows
    #[arg(long, conflicts_with = "kfold")]
    no_holdout: bool,
    /// average metrics over seeded 5-fold cross-validation
    #[arg(long)]
    kfold: bool,
    /// split seed for the holdout/k-fold protocols
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    /// downstream model for standalone mode
    #[arg(long, value_enum, default_value_t = ModelArg::RandomForest)]
    model: ModelArg,
    /// tree depth for standalone mode
    #[arg(long)]
    max_depth: Option<usize>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum ModelArg {
    RandomForest,
    DecisionTree,
    Ridge,
    Knn,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TaskArg {
    Regression,
    Classification,
}

impl From<TaskArg> for TaskKind {
    fn from(t: TaskArg) -> TaskKind {
        match t {
            TaskArg::Regression => TaskKind::Regression,
            TaskArg::Classification => TaskKind::Classification,
        }
    }
}

fn exit_code(err: &SaftError) -> u8 {
    match err {
        SaftError::Config(_) | SaftError::InvalidArgument(_) => 2,
        SaftError::Io { .. }
        | SaftError::CsvParse { .. }
        | SaftError::InvalidTable(_)
        | SaftError::ColumnMismatch(_) => 3,
        _ => 4,
    }
}

/// Resolve the effective config: --config file, else the run directory's
/// snapshot, else defaults; then apply overrides.
fn load_config(cli: &Cli, run: &RunDirectory) -> Result<PipelineConfig, SaftError> {
    let mut cfg = if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SaftError::Config(format!("cannot read {}: {e}", path.display())))?;
        PipelineConfig::from_json(&text)?
    } else if run.root.join("config.json").exists() {
        run.load_config()?
    } else {
        PipelineConfig::default()
    };
    if let Some(seed) = cli.seed {
        cfg.apply_seed(seed);
    }
    Ok(cfg)
}

fn summary(stage: &str, fields: serde_json::Value) -> String {
    let mut obj = serde_json::json!({ "stage": stage, "ok": true });
    if let (Some(o), Some(extra)) = (obj.as_object_mut(), fields.as_object()) {
        for (k, v) in extra {
            o.insert(k.clone(), v.clone());
        }
    }
    obj.to_string()
}

fn transform_standalone(args: &TransformArgs) -> Result<String, SaftError> {
    let seq_path = args.sequence.as_ref().unwrap();
    let data = args.data.as_ref().ok_or_else(|| {
        SaftError::Config("standalone transform needs --data and --output".into())
    })?;
    let output = args.output.as_ref().ok_or_else(|| {
        SaftError::Config("standalone transform needs --output".into())
    })?;
    let text = std::fs::read_to_string(seq_path)
        .map_err(|e| SaftError::io(seq_path.display().to_string(), e))?;
    let seq = CrossSequence::parse(text.trim())?;
    let table = load_table(data, args.task.into(), &args.target)?;
    let set = dsl::apply_sequence(&seq, &table)?;
    let n_columns = set.columns.len();
    let out_table = Table::new(
        set.columns,
        set.provenance,
        table.target.clone(),
        table.task,
    )?;
    out_table.write_csv(output, &args.target)?;
    Ok(summary(
        "transform",
        serde_json::json!({
            "sequence": seq.render(),
            "columns": n_columns,
            "output": output.display().to_string(),
        }),
    ))
}

fn evaluate_standalone(args: &EvaluateArgs) -> Result<String, SaftError> {
    let data = args.data.as_ref().unwrap();
    let table = load_table(data, args.task.into(), &args.target)?;
    let protocol = if args.no_holdout {
        EvalProtocol::NoHoldout
    } else if args.kfold {
        EvalProtocol::KFold
    } else {
        EvalProtocol::Holdout
    };
    let mut spec = DownstreamModelSpec {
        kind: match args.model {
            ModelArg::RandomForest => ModelKind::RandomForest,
            ModelArg::DecisionTree => ModelKind::DecisionTree,
            ModelArg::Ridge => ModelKind::Ridge,
            ModelArg::Knn => ModelKind::Knn,
        },
        ..Default::default()
    };
    if let Some(depth) = args.max_depth {
        spec.max_depth = depth;
    }
    let report = train_eval(
        &table.columns,
        &table.target,
        table.task,
        &spec,
        args.split_seed,
        protocol,
    )?;
    Ok(summary(
        "evaluate",
        serde_json::json!({ "report": report }),
    ))
}

fn run(cli: &Cli) -> Result<String, SaftError> {
    thread_cap()?;
    let run_dir = RunDirectory::new(&cli.out);

    // standalone modes never touch the run directory
    match &cli.command {
        Command::Transform(args) if args.sequence.is_some() => {
            return transform_standalone(args);
        }
        Command::Evaluate(args) if args.data.is_some() => {
            return evaluate_standalone(args);
        }
        _ => {}
    }

    let mut cfg = load_config(cli, &run_dir)?;
    if let Command::Collect(args) = &cli.command {
        if let Some(n) = args.episodes {
            cfg.collect.episodes = n;
        }
        if let Some(n) = args.steps {
            cfg.collect.steps = n;
        }
        if let Some(n) = args.cap {
            cfg.collect.cap = n;
        }
    }
    cfg.validate()?;
    if cli.verbose {
        eprintln!("run directory: {}", run_dir.root.display());
    }
    run_dir.snapshot_config(&cfg)?;

    match &cli.command {
        Command::Split => {
            let sidecar = pipeline::stage_split(&run_dir, &cfg)?;
            Ok(summary(
                "split",
                serde_json::json!({
                    "shifted_feature": sidecar.shifted_feature_name,
                    "ks_statistic": sidecar.ks_statistic,
                }),
            ))
        }
        Command::Collect(_) => {
            let n = pipeline::stage_collect(&run_dir, &cfg)?;
            Ok(summary("collect", serde_json::json!({ "corpus_size": n })))
        }
        Command::Train => {
            pipeline::stage_train(&run_dir, &cfg)?;
            Ok(summary(
                "train",
                serde_json::json!({ "checkpoint": run_dir.stage_dir("train").join("checkpoint").display().to_string() }),
            ))
        }
        Command::Generate => {
            let report = pipeline::stage_generate(&run_dir, &cfg)?;
            Ok(summary(
                "generate",
                serde_json::json!({
                    "best_sequence": report.best_sequence,
                    "best_measured": report.best_measured,
                }),
            ))
        }
        Command::Transform(_) => {
            pipeline::stage_transform(&run_dir, &cfg)?;
            Ok(summary(
                "transform",
                serde_json::json!({ "output": run_dir.stage_dir("transform").display().to_string() }),
            ))
        }
        Command::Evaluate(_) => {
            let metrics = pipeline::stage_evaluate(&run_dir, &cfg)?;
            Ok(summary(
                "evaluate",
                serde_json::json!({
                    "raw_score": metrics.raw_score,
                    "transformed_score": metrics.transformed_score,
                    "improvement": metrics.improvement,
                }),
            ))
        }
        Command::Pipeline => {
            let metrics = pipeline::run_pipeline(&run_dir, &cfg)?;
            Ok(summary(
                "pipeline",
                serde_json::json!({
                    "raw_score": metrics.raw_score,
                    "transformed_score": metrics.transformed_score,
                    "improvement": metrics.improvement,
                    "best_sequence": metrics.best_sequence,
                }),
            ))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(line) => {
            println!("{line}");
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
