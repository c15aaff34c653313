//! `codebias`: measures demographic bias in code generation backends.
//!
//! Exit codes: 0 success, 1 partial or runtime failure, 2 usage or
//! configuration error.

mod annotate;
mod commands;
mod config;

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process;

use clap::{Args, Parser, Subcommand};
use codebias::classifier::TrainConfig;
use codebias::{Error, Result};

use config::{
    resolve_audit_config, resolve_run_dir_value, resolve_scorer, resolve_sweep_axis,
    resolve_sweep_values, resolve_variant, AuditInputs, BackendOverrides, FileConfig,
    SamplingOverrides,
};

#[derive(Debug, Parser)]
#[command(
    name = "codebias",
    version,
    about = "Builds bias-eliciting code prompts, samples completions, and reports demographic bias metrics"
)]
struct Cli {
    /// TOML config file; command-line flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Run directory holding stage artifacts.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for sampling and dataset splits.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for generation, analysis, and scoring.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the prompt corpus and write corpus.jsonl.
    BuildDataset(BuildDatasetArgs),
    /// Sample completions from a backend over the corpus.
    Generate(GenerateArgs),
    /// Label stored completions with the lexicon detector.
    Analyze(AnalyzeArgs),
    /// Train the bias classifier on labeled completions.
    TrainClassifier(TrainArgs),
    /// Turn findings into per-completion bias confidences.
    Score(ScoreArgs),
    /// Render CSV, Markdown, JSON, and radar reports.
    Report(ReportArgs),
    /// Audit once per sampling value and write a CBS grid.
    Sweep(SweepArgs),
    /// Review completions by hand, sample review queues, or reconcile labels.
    Annotate(AnnotateArgs),
    /// Corpus, generation, analysis, scoring, and reporting in one resumable run.
    Run(RunArgs),
}

#[derive(Debug, Args, Default)]
struct CorpusArgs {
    /// Prompt-shape settings as key=value: functions=0..3, relevancy=0y2n|1y1n|2y0n, order=pos|neg.
    #[arg(long = "variant", value_name = "KEY=VALUE")]
    variant: Vec<String>,
    /// Restrict the corpus to these dimensions (comma separated).
    #[arg(long, value_delimiter = ',', value_name = "NAME")]
    dimensions: Vec<String>,
}

#[derive(Debug, Args, Default)]
struct BackendArgs {
    /// Directory of stored completions to replay.
    #[arg(long, value_name = "DIR", conflicts_with = "endpoint")]
    fixture_dir: Option<PathBuf>,
    /// Completions-compatible HTTP endpoint URL.
    #[arg(long, value_name = "URL")]
    endpoint: Option<String>,
    /// Model name sent to the HTTP endpoint.
    #[arg(long, value_name = "NAME")]
    model: Option<String>,
    /// Environment variable holding the bearer token (the token itself is never a flag).
    #[arg(long, value_name = "VAR")]
    auth_env: Option<String>,
    /// Backend label recorded on generation records.
    #[arg(long, value_name = "NAME")]
    backend_name: Option<String>,
}

impl BackendArgs {
    fn overrides(&self) -> BackendOverrides {
        BackendOverrides {
            fixture_dir: self.fixture_dir.clone(),
            endpoint: self.endpoint.clone(),
            model: self.model.clone(),
            auth_env: self.auth_env.clone(),
            backend_name: self.backend_name.clone(),
        }
    }
}

#[derive(Debug, Args, Default)]
struct SamplingArgs {
    /// Sampling temperature, 0 to 2.
    #[arg(long)]
    temperature: Option<f64>,
    /// Nucleus sampling cutoff, 0 exclusive to 1 inclusive.
    #[arg(long)]
    top_p: Option<f64>,
    /// Completions sampled per prompt.
    #[arg(long, value_name = "N")]
    num_samples: Option<u32>,
    #[arg(long, value_name = "N")]
    max_tokens: Option<u32>,
}

impl SamplingArgs {
    fn overrides(&self) -> SamplingOverrides {
        SamplingOverrides {
            temperature: self.temperature,
            top_p: self.top_p,
            num_samples: self.num_samples,
            max_tokens: self.max_tokens,
        }
    }
}

#[derive(Debug, Args)]
struct BuildDatasetArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Run directory (defaults to --out).
    #[arg(long, value_name = "DIR")]
    run: Option<PathBuf>,
    /// Also match bare integer ages against the age lexicon.
    #[arg(long)]
    age_numeric: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Labeled completions as JSONL rows with `code` and `biased` fields.
    #[arg(long, value_name = "FILE")]
    data: Option<PathBuf>,
    /// Where to write the trained model.
    #[arg(long, value_name = "FILE")]
    model_out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    epochs: Option<u32>,
    #[arg(long, value_name = "RATE")]
    learning_rate: Option<f64>,
    /// L2 weight-decay strength.
    #[arg(long, value_name = "LAMBDA")]
    l2: Option<f64>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Run directory (defaults to --out).
    #[arg(long, value_name = "DIR")]
    run: Option<PathBuf>,
    /// Score with this trained classifier instead of the lexicon oracle.
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run directory (defaults to --out).
    #[arg(long, value_name = "DIR")]
    run: Option<PathBuf>,
    /// Per-problem pass counts as JSONL rows with `n` and `c` fields.
    #[arg(long, value_name = "FILE")]
    pass_data: Option<PathBuf>,
    /// k values for pass@k rows (comma separated).
    #[arg(long = "pass-k", value_delimiter = ',', value_name = "K")]
    pass_k: Vec<u32>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Sampling parameter to sweep: temperature or top_p.
    #[arg(long, value_name = "AXIS")]
    axis: Option<String>,
    /// Values to sweep over (comma separated; defaults to 0.1..0.9).
    #[arg(long, value_delimiter = ',', value_name = "VALUE")]
    values: Vec<f64>,
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Score with this trained classifier instead of the lexicon oracle.
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
    /// Also match bare integer ages against the age lexicon.
    #[arg(long)]
    age_numeric: bool,
}

#[derive(Debug, Args)]
struct AnnotateArgs {
    /// Run directory (defaults to --out).
    #[arg(long, value_name = "DIR")]
    run: Option<PathBuf>,
    /// Annotator id recorded on every label.
    #[arg(long, value_name = "ID")]
    annotator: Option<String>,
    /// Majority-vote the stored labels and write consensus.jsonl.
    #[arg(long)]
    consensus: bool,
    /// Sample this many records per (dimension, modifier) cell into queue.jsonl.
    #[arg(long, value_name = "N", conflicts_with = "consensus")]
    sample_per_cell: Option<usize>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Score with this trained classifier instead of the lexicon oracle.
    #[arg(long, value_name = "FILE")]
    classifier: Option<PathBuf>,
    /// Also match bare integer ages against the age lexicon.
    #[arg(long)]
    age_numeric: bool,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 2 } else { 0 };
            let _ = err.print();
            process::exit(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => process::exit(code),
        Err(err) => {
            eprintln!("error: {err}");
            process::exit(exit_code_for(&err));
        }
    }
}

fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Input(_) => 2,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    let file = FileConfig::load(cli.config.as_deref())?;
    let out = cli.out.as_deref();
    let seed = cli.seed.or(file.seed).unwrap_or(42);
    let jobs = cli.jobs.or(file.jobs).unwrap_or(4);
    match &cli.command {
        Command::BuildDataset(args) => {
            let out_dir = resolve_run_dir_value(None, out, &file)?;
            let variant = resolve_variant(&args.corpus.variant, &file.variant)?;
            let dimensions = config::resolve_dimensions(&args.corpus.dimensions, &file.dimensions)?;
            commands::cmd_build_dataset(&out_dir, &variant, dimensions.as_deref())
        }
        Command::Generate(args) => {
            let inputs = AuditInputs {
                out,
                seed: cli.seed,
                jobs: cli.jobs,
                backend: args.backend.overrides(),
                sampling: args.sampling.overrides(),
                classifier: None,
                variant_tokens: &args.corpus.variant,
                dimensions: &args.corpus.dimensions,
                age_numeric: false,
            };
            let config = resolve_audit_config(&inputs, &file)?;
            commands::cmd_generate(&config)
        }
        Command::Analyze(args) => {
            let run_dir = resolve_run_dir_value(args.run.as_deref(), out, &file)?;
            let mut options = codebias::analyzer::AnalyzerOptions::default();
            if let Some(v) = file.analyzer.age_numeric {
                options.age_numeric = v;
            }
            if args.age_numeric {
                options.age_numeric = true;
            }
            commands::cmd_analyze(&run_dir, options, jobs)
        }
        Command::TrainClassifier(args) => {
            let data = args
                .data
                .clone()
                .or_else(|| file.train.data.clone())
                .ok_or_else(|| {
                    Error::Config(
                        "no training data; pass --data or set train.data in the config file"
                            .into(),
                    )
                })?;
            let model_out = args
                .model_out
                .clone()
                .or_else(|| file.train.model_out.clone())
                .unwrap_or_else(|| PathBuf::from("model.json"));
            let defaults = TrainConfig::default();
            let train_config = TrainConfig {
                epochs: args.epochs.or(file.train.epochs).unwrap_or(defaults.epochs),
                learning_rate: args
                    .learning_rate
                    .or(file.train.learning_rate)
                    .unwrap_or(defaults.learning_rate),
                l2: args.l2.or(file.train.l2).unwrap_or(defaults.l2),
                seed,
            };
            commands::cmd_train(&data, &model_out, &train_config)
        }
        Command::Score(args) => {
            let run_dir = resolve_run_dir_value(args.run.as_deref(), out, &file)?;
            let scorer = resolve_scorer(args.classifier.as_deref(), &file.scorer)?;
            commands::cmd_score(&run_dir, &scorer, jobs)
        }
        Command::Report(args) => {
            let run_dir = resolve_run_dir_value(args.run.as_deref(), out, &file)?;
            let pass_data = args
                .pass_data
                .clone()
                .or_else(|| file.report.pass_data.clone());
            let pass_ks = if !args.pass_k.is_empty() {
                args.pass_k.clone()
            } else {
                file.report.pass_ks.clone().unwrap_or_else(|| vec![1])
            };
            commands::cmd_report(&run_dir, pass_data.as_deref(), &pass_ks)
        }
        Command::Sweep(args) => {
            let inputs = AuditInputs {
                out,
                seed: cli.seed,
                jobs: cli.jobs,
                backend: args.backend.overrides(),
                sampling: args.sampling.overrides(),
                classifier: args.classifier.as_deref(),
                variant_tokens: &args.corpus.variant,
                dimensions: &args.corpus.dimensions,
                age_numeric: args.age_numeric,
            };
            let config = resolve_audit_config(&inputs, &file)?;
            let axis = resolve_sweep_axis(args.axis.as_deref(), &file.sweep)?;
            let values = resolve_sweep_values(&args.values, &file.sweep);
            commands::cmd_sweep(&config, axis, &values)
        }
        Command::Annotate(args) => {
            let run_dir = resolve_run_dir_value(args.run.as_deref(), out, &file)?;
            cmd_annotate(args, &run_dir, seed, &file)
        }
        Command::Run(args) => {
            let inputs = AuditInputs {
                out,
                seed: cli.seed,
                jobs: cli.jobs,
                backend: args.backend.overrides(),
                sampling: args.sampling.overrides(),
                classifier: args.classifier.as_deref(),
                variant_tokens: &args.corpus.variant,
                dimensions: &args.corpus.dimensions,
                age_numeric: args.age_numeric,
            };
            let config = resolve_audit_config(&inputs, &file)?;
            commands::cmd_run(&config)
        }
    }
}

fn cmd_annotate(args: &AnnotateArgs, run_dir: &Path, seed: u64, file: &FileConfig) -> Result<i32> {
    if args.consensus {
        let stdout = io::stdout();
        annotate::consensus_report(run_dir, &mut stdout.lock())?;
        return Ok(0);
    }
    let file_per_cell = if args.annotator.is_none() {
        file.annotate.sample_per_cell
    } else {
        None
    };
    if let Some(per_cell) = args.sample_per_cell.or(file_per_cell) {
        let queued = annotate::sample_queue(run_dir, per_cell, seed)?;
        println!("queued {queued} record(s) for review");
        return Ok(0);
    }
    let annotator = args
        .annotator
        .clone()
        .or_else(|| file.annotate.annotator.clone())
        .ok_or_else(|| {
            Error::Config(
                "annotate needs --annotator <id>, --consensus, or --sample-per-cell <n>".into(),
            )
        })?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    review_with(run_dir, &annotator, &mut stdin.lock(), &mut stdout.lock())
}

fn review_with(
    run_dir: &Path,
    annotator: &str,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> Result<i32> {
    annotate::review(run_dir, annotator, input, output)?;
    Ok(0)
}
