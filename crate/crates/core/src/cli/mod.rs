//! The `vulnrepair` command line.
//!
//! Data goes to files or standard output; logs and diagnostics go to
//! standard error. Any error exits nonzero.

mod config;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::corpus::{
    cwe_frequency, ingest_database_with_stats, read_corpus, sample_fraction, write_corpus, write_metadata, CorpusFilter,
    CorpusMetadata, Tokenizer, DEFAULT_EXCLUDED_CWES, DEFAULT_LANGUAGE, DEFAULT_TOKEN_LIMIT,
};
use crate::eval::{aggregate, apply_patch_to_file, emit_report, run_build_command, score_outcomes, EvaluationRow, Grouping, Report, ReportFormat};
use crate::llm::{ChatBackend, ChatRequest, HttpBackend, LlmError, RecordingBackend, ReplayBackend, Role};
use crate::metric::{codebleu, MetricWeights};
use crate::pipeline::{read_outcomes, run_batch, Clock, ConfigLabel, FixedClock, OutcomeSink, RepairEngine, SystemClock};
use crate::prompting::{Prompter, TemplateSet};

pub use config::{ModelEntry, PresetRef, RunConfig, SampleConfig, MAX_PARALLELISM};

pub const OUTCOMES_FILE: &str = "outcomes.jsonl";
pub const RESOLVED_CONFIG_FILE: &str = "run_config.toml";

#[derive(Debug, Parser)]
#[command(name = "vulnrepair", version, about = "Iterative LLM repair of vulnerable C functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Extract before/after function pairs from a CVEfixes SQLite database.
    Ingest(IngestArgs),
    /// Repair every sampled corpus record with each configured model.
    Run(RunArgs),
    /// Score an outcome file against the corpus it was produced from.
    Score(ScoreArgs),
    /// Aggregate evaluation rows into a report.
    Report(ReportArgs),
    /// CodeBLEU of one C file against another.
    ScorePair(ScorePairArgs),
    /// Replace one function definition in a C file.
    Apply(ApplyArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    pub db: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long, default_value = DEFAULT_LANGUAGE)]
    pub language: String,
    #[arg(long, default_value_t = DEFAULT_TOKEN_LIMIT)]
    pub limit_tokens: usize,
    /// Repeat to exclude several; replaces the default list.
    #[arg(long = "exclude-cwe", default_values = DEFAULT_EXCLUDED_CWES)]
    pub exclude_cwes: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub min_pairs_per_cwe: usize,
    #[arg(long, default_value = "cl100k_base")]
    pub tokenizer: String,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Serve completions from a recorded cassette instead of the network.
    #[arg(long, conflicts_with = "record")]
    pub replay: Option<PathBuf>,
    /// Record every exchange to a cassette.
    #[arg(long)]
    pub record: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub config_label: Option<ConfigLabel>,
    #[arg(long)]
    pub iteration_limit: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<MetricWeights>,
    #[arg(long)]
    pub sample_fraction: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[arg(long)]
    pub template_dir: Option<PathBuf>,
    #[arg(long)]
    pub prompt_budget: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Rows file (JSONL); standard output when omitted.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<MetricWeights>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub rows: PathBuf,
    #[arg(long, default_value = "markdown")]
    pub format: ReportFormat,
    /// model_config or cwe_config; repeat for both (the default).
    #[arg(long = "grouping", value_parser = parse_grouping)]
    pub groupings: Vec<Grouping>,
    #[arg(short, long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScorePairArgs {
    pub candidate: PathBuf,
    pub reference: PathBuf,
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<MetricWeights>,
}

#[derive(Debug, Args)]
pub struct ApplyArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long)]
    pub function: String,
    /// File holding the replacement definition.
    #[arg(long)]
    pub patch: PathBuf,
    #[arg(long)]
    pub in_place: bool,
    /// Shell command run in the file's directory after patching.
    #[arg(long)]
    pub build: Option<String>,
}

/// Parses `ngram,weighted_ngram,ast,dataflow`.
fn parse_weights(s: &str) -> Result<MetricWeights, String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    let [ngram, weighted_ngram, ast, dataflow] = parts[..] else {
        return Err(format!("expected four comma-separated weights, got {}", parts.len()));
    };
    let w = MetricWeights { ngram, weighted_ngram, ast, dataflow };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

fn parse_grouping(s: &str) -> Result<Grouping, String> {
    Grouping::parse(s).ok_or_else(|| format!("unknown grouping {s}; expected model_config or cwe_config"))
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into());
    let _ = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).try_init();
}

pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Run(a) => cmd_run(a),
        Command::Score(a) => cmd_score(a),
        Command::Report(a) => cmd_report(a),
        Command::ScorePair(a) => cmd_score_pair(a),
        Command::Apply(a) => cmd_apply(a),
    }
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    ensure!(args.db.is_file(), "database {} does not exist", args.db.display());
    let filter = CorpusFilter {
        target_language: args.language,
        token_limit: args.limit_tokens,
        excluded_cwes: args.exclude_cwes.into_iter().collect(),
        min_pairs_per_cwe: args.min_pairs_per_cwe,
        tokenizer: args.tokenizer.parse::<Tokenizer>()?,
    };
    let (records, stats) = ingest_database_with_stats(&args.db, &filter)?;
    write_corpus(&args.output, &records)?;
    let frequency = cwe_frequency(&records);
    write_metadata(
        &args.output,
        &CorpusMetadata {
            source_database: args.db.display().to_string(),
            filter,
            record_count: records.len(),
            cwe_frequency: frequency.clone(),
        },
    )?;
    tracing::info!(?stats, "ingest finished");

    let mut out = std::io::stdout().lock();
    writeln!(out, "CWE\tpairs")?;
    for (cwe, n) in &frequency {
        writeln!(out, "{cwe}\t{n}")?;
    }
    writeln!(out, "total\t{}", records.len())?;
    Ok(())
}

/// Sends each request to the backend registered for its wire model.
struct ModelRouter {
    routes: BTreeMap<String, HttpBackend>,
}

impl ChatBackend for ModelRouter {
    fn send(&self, request: &ChatRequest) -> Result<String, LlmError> {
        match self.routes.get(&request.model) {
            Some(b) => b.send(request),
            None => Err(LlmError::InvalidProfile(format!("no endpoint configured for model {}", request.model))),
        }
    }
}

fn apply_overrides(config: &mut RunConfig, args: &RunArgs) {
    if let Some(v) = &args.corpus {
        config.corpus = v.clone();
    }
    if let Some(v) = &args.output_dir {
        config.output_dir = v.clone();
    }
    if let Some(v) = args.config_label {
        config.config_label = v;
    }
    if let Some(v) = args.iteration_limit {
        config.iteration_limit = v;
    }
    if let Some(v) = args.threshold {
        config.threshold = v;
    }
    if let Some(v) = args.weights {
        config.weights = v;
    }
    if let Some(v) = args.sample_fraction {
        config.sample.fraction = v;
    }
    if let Some(v) = args.seed {
        config.sample.seed = v;
    }
    if let Some(v) = args.parallelism {
        config.parallelism = v;
    }
    if let Some(v) = &args.template_dir {
        config.template_dir = Some(v.clone());
    }
    if let Some(v) = args.prompt_budget {
        config.prompt_budget = v;
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = RunConfig::load(&args.config)?;
    apply_overrides(&mut config, &args);
    config.validate()?;
    let config = config.resolved()?;

    std::fs::create_dir_all(&config.output_dir)
        .with_context(|| format!("cannot create output directory {}", config.output_dir.display()))?;
    std::fs::write(config.output_dir.join(RESOLVED_CONFIG_FILE), config.to_toml()?)?;

    let profiles = config.profiles()?;
    let pipeline = config.pipeline();
    let templates = match &config.template_dir {
        Some(dir) => TemplateSet::from_dir(dir)?,
        None => TemplateSet::builtin(),
    };
    let records = read_corpus(&config.corpus)?;
    let selected = sample_fraction(&records, config.sample.fraction, config.sample.seed)?;
    let tasks: Vec<_> = selected.iter().map(|r| r.task()).collect();
    tracing::info!(records = records.len(), selected = tasks.len(), models = profiles.len(), "starting run");

    let outcome_path = config.output_dir.join(OUTCOMES_FILE);
    // Cassette order is the request order, so recorded runs stay sequential.
    let sequential = args.replay.is_some() || args.record.is_some();
    let parallelism = if sequential { 1 } else { config.parallelism };

    let backend: Box<dyn ChatBackend> = if let Some(path) = &args.replay {
        let replay = ReplayBackend::from_path(path)?;
        // Exchanges behind outcomes already on disk were consumed by the
        // earlier, interrupted invocation.
        let done: usize = read_outcomes(&outcome_path)?
            .outcomes
            .iter()
            .map(|o| o.trace.session.messages().iter().filter(|m| m.role == Role::Assistant).count())
            .sum();
        replay.skip(done).context("outcome file does not match the cassette")?;
        Box::new(replay)
    } else {
        let mut routes = BTreeMap::new();
        for p in &profiles {
            ensure!(!p.endpoint.is_empty(), "model {} has no endpoint", p.name);
            let backend = HttpBackend::from_profile(p, config.retry)?;
            if routes.insert(p.wire_model().to_string(), backend).is_some() {
                bail!("two models send the same model id {}", p.wire_model());
            }
        }
        let router = ModelRouter { routes };
        match &args.record {
            Some(path) => Box::new(RecordingBackend::create(router, path)?),
            None => Box::new(router),
        }
    };
    let clock: Box<dyn Clock> = if args.replay.is_some() { Box::new(FixedClock(0)) } else { Box::new(SystemClock) };

    let sink = OutcomeSink::open(&outcome_path)?;
    let mut out = std::io::stdout().lock();
    for profile in &profiles {
        let prompter = Prompter::new(templates.clone(), profile.tokenizer);
        let engine = RepairEngine {
            config: &pipeline,
            profile,
            backend: backend.as_ref(),
            prompter: &prompter,
            clock: clock.as_ref(),
        };
        let summary = run_batch(&engine, &tasks, &sink, parallelism)?;
        tracing::info!(model = %profile.name, ?summary, "model finished");
        writeln!(
            out,
            "{}",
            serde_json::json!({ "model": profile.name, "config_label": pipeline.label, "summary": summary })
        )?;
    }
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(serde_json::from_str(&line).with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok(items)
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(std::io::stdout().lock()),
    })
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    ensure!(args.outcomes.is_file(), "outcome file {} does not exist", args.outcomes.display());
    let log = read_outcomes(&args.outcomes)?;
    if log.truncated_tail {
        tracing::warn!(path = %args.outcomes.display(), "ignoring incomplete last outcome line");
    }
    let records = read_corpus(&args.corpus)?;
    let rows = score_outcomes(&log.outcomes, &records, &args.weights.unwrap_or_default())?;
    let mut out = output_writer(args.output.as_deref())?;
    for row in &rows {
        writeln!(out, "{}", serde_json::to_string(row)?)?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let rows: Vec<EvaluationRow> = read_jsonl(&args.rows)?;
    let groupings = if args.groupings.is_empty() { Grouping::ALL.to_vec() } else { args.groupings };
    let report = if rows.is_empty() { Report::default() } else { aggregate(&rows, &groupings)? };
    let mut out = output_writer(args.output.as_deref())?;
    out.write_all(emit_report(&report, args.format)?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn cmd_score_pair(args: ScorePairArgs) -> Result<()> {
    let read = |p: &Path| std::fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
    let breakdown = codebleu(&read(&args.candidate)?, &read(&args.reference)?, &args.weights.unwrap_or_default())?;
    println!("{}", serde_json::to_string(&breakdown)?);
    Ok(())
}

fn cmd_apply(args: ApplyArgs) -> Result<()> {
    let patch = std::fs::read_to_string(&args.patch).with_context(|| format!("cannot read {}", args.patch.display()))?;
    let written = apply_patch_to_file(&args.file, &args.function, &patch, args.in_place)?;
    let mut report = serde_json::json!({ "written": written });
    if let Some(command) = &args.build {
        let dir = args.file.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let status = run_build_command(command, dir)?;
        report["build"] = serde_json::to_value(&status)?;
        println!("{report}");
        ensure!(status.success, "build command exited with {:?}", status.exit_code);
        return Ok(());
    }
    println!("{report}");
    Ok(())
}
