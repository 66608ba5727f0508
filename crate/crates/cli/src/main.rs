use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use sqlcode_core::answer::{MatchConfig, NumericMode};
use sqlcode_core::bench::{run_benchmark, RunConfig};
use sqlcode_core::code::{ProcessSandbox, Sandbox, StubSandbox};
use sqlcode_core::dataset::{load_dataset, DbRegistry, Question};
use sqlcode_core::eval::{
    read_traces, report_markdown, routing_analysis, routing_markdown, score_oracle, score_traces, Report,
};
use sqlcode_core::llm::{HttpBackend, HttpConfig, LlmBackend, Script, ScriptedBackend};
use sqlcode_core::pipelines::{MethodId, PipelineSettings, Trace};
use sqlcode_core::prompting::PromptBuilder;
use sqlcode_core::schema::SchemaOptions;

/// Answer analytical questions over SQLite databases with generated SQL and
/// generated Python, and score the results.
#[derive(Parser)]
#[command(name = "sqlcode", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method over a dataset and write trace files.
    Run(RunArgs),
    /// Score trace files against the dataset's gold answers.
    Eval(EvalArgs),
    /// How often the Python step was used, split by Text2SQL correctness.
    Routing(RoutingArgs),
    /// Accuracy of picking the better of two methods per question.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    db_registry: PathBuf,
    /// knowledge, text2sql, sc:K, t2sc-single, t2sc-multi, hybrid-single or hybrid-multi
    #[arg(long)]
    method: MethodId,
    #[arg(long, default_value_t = 3)]
    runs: u32,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// http, scripted:PATH or replay:PATH
    #[arg(long, default_value = "http")]
    backend: String,
    /// process:COMMAND or stub:PATH; required by methods that run Python
    #[arg(long)]
    sandbox: Option<String>,
    /// Directory overriding the built-in prompt templates
    #[arg(long)]
    prompts: Option<PathBuf>,
    /// SQL statement timeout in seconds
    #[arg(long, default_value_t = 120.0)]
    sql_timeout: f64,
    /// Sandbox wall-clock timeout in seconds
    #[arg(long, default_value_t = 300.0)]
    code_timeout: f64,
    #[arg(long, default_value_t = 3)]
    max_repairs: u32,
    /// Sample rows per table in the schema context
    #[arg(long, default_value_t = 3)]
    schema_samples: usize,
    /// Store wall-clock timings in traces (makes them differ run to run)
    #[arg(long)]
    record_timings: bool,
}

#[derive(Args, Clone)]
struct MatchArgs {
    /// Compare numbers with this absolute tolerance instead of exactly
    #[arg(long)]
    epsilon: Option<f64>,
    /// Compare as sets rather than multisets
    #[arg(long)]
    dedupe: bool,
}

impl MatchArgs {
    fn config(&self) -> MatchConfig {
        MatchConfig {
            numeric: self.epsilon.map_or(NumericMode::Exact, NumericMode::Epsilon),
            dedupe: self.dedupe,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Markdown,
    Json,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Trace files or directories searched for *.jsonl
    #[arg(long, required = true, num_args = 1..)]
    traces: Vec<PathBuf>,
    #[command(flatten)]
    matching: MatchArgs,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Args)]
struct RoutingArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// T2SC or Hybrid traces
    #[arg(long, required = true, num_args = 1..)]
    t2sc: Vec<PathBuf>,
    /// Text2SQL traces giving each question's reference verdict
    #[arg(long, required = true, num_args = 1..)]
    reference: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    reference_run: u32,
    #[command(flatten)]
    matching: MatchArgs,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, num_args = 1..)]
    a: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    b: Vec<PathBuf>,
    #[command(flatten)]
    matching: MatchArgs,
    #[arg(long, value_enum, default_value_t = Format::Markdown)]
    format: Format,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args).map(|_| 0),
        Command::Routing(args) => cmd_routing(args).map(|_| 0),
        Command::Oracle(args) => cmd_oracle(args).map(|_| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn backend(spec: &str) -> Result<Arc<dyn LlmBackend>> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "http" => {
            let config = HttpConfig::from_env().map_err(anyhow::Error::msg)?;
            Arc::new(HttpBackend::new(config)?)
        }
        "scripted" => {
            let script = Script::load(Path::new(arg)).with_context(|| format!("reading script {arg}"))?;
            Arc::new(ScriptedBackend::new(script))
        }
        "replay" => {
            let script = Script::from_replay_log(Path::new(arg)).with_context(|| format!("reading replay log {arg}"))?;
            Arc::new(ScriptedBackend::new(script))
        }
        _ => bail!("unknown backend '{spec}'; expected http, scripted:PATH or replay:PATH"),
    })
}

fn sandbox(spec: Option<&str>, method: MethodId) -> Result<Arc<dyn Sandbox>> {
    let Some(spec) = spec else {
        if method.uses_sandbox() {
            bail!("method {method} runs Python; pass --sandbox process:COMMAND or --sandbox stub:PATH");
        }
        // never consulted by SQL-only methods
        return Ok(Arc::new(StubSandbox::new(Vec::new())));
    };
    Ok(match spec.split_once(':') {
        Some(("process", cmd)) => Arc::new(ProcessSandbox::new(cmd).map_err(anyhow::Error::msg)?),
        Some(("stub", path)) => Arc::new(StubSandbox::load(Path::new(path)).with_context(|| format!("reading {path}"))?),
        _ => bail!("unknown sandbox '{spec}'; expected process:COMMAND or stub:PATH"),
    })
}

fn seconds(s: f64, flag: &str) -> Result<Duration> {
    Duration::try_from_secs_f64(s).ok().filter(|d| !d.is_zero()).with_context(|| format!("{flag} must be positive"))
}

fn cmd_run(args: RunArgs) -> Result<i32> {
    let dataset = load_dataset(&args.dataset).with_context(|| format!("loading {}", args.dataset.display()))?;
    let registry = DbRegistry::load(&args.db_registry)?;
    let backend = backend(&args.backend)?;
    let sandbox = sandbox(args.sandbox.as_deref(), args.method)?;
    let prompts = match &args.prompts {
        Some(dir) => PromptBuilder::from_dir(dir)?,
        None => PromptBuilder::builtin(),
    };
    let mut settings = PipelineSettings { max_repairs: args.max_repairs, record_timings: args.record_timings, ..Default::default() };
    settings.sql_limits.timeout = seconds(args.sql_timeout, "--sql-timeout")?;
    settings.sandbox_limits.wall_timeout = seconds(args.code_timeout, "--code-timeout")?;
    let cfg = RunConfig {
        method: args.method,
        runs: args.runs,
        seed: args.seed,
        workers: args.workers,
        out_dir: args.out.clone(),
        schema: SchemaOptions { k_samples: args.schema_samples, ..Default::default() },
    };
    let summary = run_benchmark(&dataset, &registry, backend, sandbox, prompts, settings, &cfg)?;
    eprintln!(
        "{}: {} traces written, {} already present, {} missing",
        args.method,
        summary.written,
        summary.already_done,
        summary.missing.len()
    );
    for m in &summary.missing {
        eprintln!("missing {} run {}: {}", m.question_id, m.run, m.reason);
    }
    Ok(summary.exit_code())
}

/// Expands directories into the *.jsonl files beneath them, in path order.
fn trace_files(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.is_dir() {
                walk(&path, out)?;
            } else if path.extension().is_some_and(|e| e == "jsonl") && path.file_name() != Some("replay.jsonl".as_ref()) {
                out.push(path);
            }
        }
        Ok(())
    }
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found = Vec::new();
            walk(p, &mut found)?;
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    Ok(out)
}

fn load_traces(paths: &[PathBuf]) -> Result<Vec<Trace>> {
    let mut traces = Vec::new();
    for f in trace_files(paths)? {
        traces.extend(read_traces(&f)?);
    }
    Ok(traces)
}

fn load_questions(path: &Path) -> Result<Vec<Question>> {
    load_dataset(path).with_context(|| format!("loading {}", path.display()))
}

fn print_report(report: &Report, format: Format) {
    match format {
        Format::Markdown => print!("{}", report_markdown(report)),
        Format::Json => println!("{}", report.to_json()),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_questions(&args.dataset)?;
    let report = score_traces(&load_traces(&args.traces)?, &dataset, &args.matching.config())?;
    for w in &report.warnings {
        log::warn!("{w}");
    }
    print_report(&report, args.format);
    Ok(())
}

fn cmd_routing(args: RoutingArgs) -> Result<()> {
    let dataset = load_questions(&args.dataset)?;
    let table = routing_analysis(
        &load_traces(&args.t2sc)?,
        &load_traces(&args.reference)?,
        &dataset,
        &args.matching.config(),
        args.reference_run,
    )?;
    match args.format {
        Format::Markdown => print!("{}", routing_markdown(&table)),
        Format::Json => println!("{}", table.to_json()),
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<()> {
    let dataset = load_questions(&args.dataset)?;
    let cfg = args.matching.config();
    let a = load_traces(&args.a)?;
    let b = load_traces(&args.b)?;
    let mut report = score_traces(&a, &dataset, &cfg)?;
    let other = score_traces(&b, &dataset, &cfg)?;
    report.methods.extend(other.methods);
    report.warnings.extend(other.warnings);
    report.methods.push(score_oracle(&a, &b, &dataset, &cfg)?);
    print_report(&report, args.format);
    Ok(())
}
