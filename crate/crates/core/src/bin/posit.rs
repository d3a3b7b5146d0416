use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use posit::dataset::{build_matrix, ingest_csv, write_matrix, DEFAULT_RATING_THRESHOLD};
use posit::experiment::{self, ExperimentConfig, SelectionMetric, SplitName, SweepSpec};
use posit::synthetic::{self, SyntheticSpec};

#[derive(Parser)]
#[command(name = "posit", version, about = "Train and evaluate EASE, POSIT and popularity-bias baselines")]
struct Cli {
    /// Print a machine-readable JSON summary on stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a ratings CSV (or a generated synthetic log) into a matrix file.
    Ingest(IngestArgs),
    /// Train one method, select on validation, evaluate on test.
    Run(RunArgs),
    /// Grid search on validation; the winner is evaluated on test.
    Sweep(SweepArgs),
    /// Metrics of a saved checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Write figure data (weights with PCA coordinates, categories, advantage).
    Export {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct IngestArgs {
    /// `user,item[,rating[,timestamp]]` CSV.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    input: Option<PathBuf>,
    /// Generate a MovieLens-shaped log instead of reading one.
    #[arg(long)]
    synthetic: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RATING_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 5)]
    min_user: usize,
    #[arg(long, default_value_t = 1)]
    min_item: usize,
    #[arg(long, default_value_t = 1000)]
    users: usize,
    #[arg(long, default_value_t = 1500)]
    items: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable): `--set lambda=1e-5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long, value_parser = ["ease", "posit", "ipw", "cvar", "rerank", "mp"])]
    method: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Parameter values to try (repeatable): `--grid beta=0,-0.25,-0.5`.
    #[arg(long, required = true, value_name = "KEY=V1,V2")]
    grid: Vec<String>,
    #[arg(long, default_value = "recall@100")]
    metric: String,
}

fn load_config(args: &RunArgs, validate: bool) -> posit::Result<ExperimentConfig> {
    let mut overrides = args.overrides.clone();
    if let Some(m) = &args.method {
        overrides.push(format!("method={m}"));
    }
    if let Some(out) = &args.out {
        overrides.push(format!("out_dir={}", out.display()));
    }
    if validate {
        ExperimentConfig::load(args.config.as_deref(), &overrides)
    } else {
        ExperimentConfig::load_unvalidated(args.config.as_deref(), &overrides)
    }
}

/// Writes one line to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn ingest(args: &IngestArgs) -> posit::Result<serde_json::Value> {
    let (csv_path, meta_path) = if args.synthetic {
        let data = synthetic::generate(&SyntheticSpec {
            n_users: args.users,
            n_items: args.items,
            seed: args.seed,
            ..SyntheticSpec::default()
        })?;
        let ratings = sidecar(&args.out, "ratings.csv");
        let meta = sidecar(&args.out, "item_meta.csv");
        synthetic::write_events_csv(&ratings, &data.events)?;
        synthetic::write_item_meta_csv(&meta, &data.items)?;
        (ratings, Some(meta))
    } else {
        (args.input.clone().expect("clap requires --input"), None)
    };
    let events = ingest_csv(&csv_path, args.threshold)?;
    let m = build_matrix(&events, args.min_user, args.min_item)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| posit::Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    write_matrix(&args.out, &m)?;
    Ok(json!({
        "matrix": args.out,
        "ratings_csv": csv_path,
        "item_meta": meta_path,
        "n_users": m.n_users(),
        "n_items": m.n_items(),
        "nnz": m.nnz(),
        "content_hash": m.content_hash(),
    }))
}

fn execute(cli: &Cli) -> posit::Result<serde_json::Value> {
    match &cli.command {
        Command::Ingest(args) => ingest(args),
        Command::Run(args) => {
            let cfg = load_config(args, true)?;
            let out = experiment::run(&cfg)?;
            Ok(serde_json::to_value(out)?)
        }
        Command::Sweep(args) => {
            let cfg = load_config(&args.run, false)?;
            let metric: SelectionMetric = args.metric.parse()?;
            let spec = SweepSpec::from_args(&args.grid, metric)?;
            Ok(serde_json::to_value(experiment::sweep(&cfg, &spec)?)?)
        }
        Command::Evaluate { checkpoint, split } => {
            let split: SplitName = split.parse()?;
            Ok(serde_json::to_value(experiment::evaluate_checkpoint(checkpoint, split)?)?)
        }
        Command::Export { checkpoint, out } => {
            let files = experiment::export_figures_data(checkpoint, out)?;
            Ok(json!({ "files": files }))
        }
    }
}

fn human_summary(command: &Command, value: &serde_json::Value) {
    match command {
        Command::Run(_) | Command::Sweep(_) => {
            let summary = value
                .get("summary")
                .or_else(|| value.get("best").and_then(|b| b.get("summary")));
            if let Some(test) = summary.and_then(|s| s.get("test")) {
                for key in ["recall", "ndcg", "item_recall", "coverage_ratio"] {
                    emit(format_args!("{key}: {}", test[key]));
                }
                emit(format_args!("gini_ratio: {}", test["gini_ratio"]));
            }
            if let Some(dir) = value.get("out_dir").or_else(|| value.get("leaderboard")) {
                emit(format_args!("outputs: {dir}"));
            }
        }
        _ => emit(serde_json::to_string_pretty(value).unwrap_or_default()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(value) => {
            if cli.json {
                emit(&value);
            } else {
                human_summary(&cli.command, &value);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.json {
                emit(json!({ "error": e.to_string() }));
            }
            log::error!("{e}");
            ExitCode::FAILURE
        }
    }
}
