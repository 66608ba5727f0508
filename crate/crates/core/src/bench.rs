//! Runs one method over a dataset with a pool of workers and writes
//! `traces/{method}/run{r}.jsonl` plus a replay log under an output directory.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{mpsc, Arc, Mutex};

use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::code::Sandbox;
use crate::dataset::{DbRegistry, Question};
use crate::llm::{LlmBackend, LlmError, LlmRequest, LlmResponse, RecordingBackend};
use crate::pipelines::{derive_seed, Engine, MethodId, PipelineSettings, QuestionContext, Trace};
use crate::prompting::PromptBuilder;
use crate::schema::{introspect_schema, render_context, SchemaAnnotations, SchemaOptions};

pub const REPLAY_FILE: &str = "replay.jsonl";
pub const RESUME_FILE: &str = "resume.json";
const META_FILE: &str = "meta.json";

/// Everything that went wrong before any question ran.
#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io { path: path.to_path_buf(), source }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub method: MethodId,
    pub runs: u32,
    pub seed: u64,
    pub workers: usize,
    pub out_dir: PathBuf,
    pub schema: SchemaOptions,
}

/// Identifies the settings a trace directory was produced with; a resume
/// with different settings would mix incomparable traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RunMeta {
    method: MethodId,
    seed: u64,
    max_repairs: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingPair {
    pub question_id: String,
    pub run: u32,
    pub reason: String,
}

/// Written next to the traces when some (question, run) pairs produced none.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResumeManifest {
    pub method: MethodId,
    pub runs: u32,
    pub seed: u64,
    pub missing: Vec<MissingPair>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunSummary {
    pub written: usize,
    pub already_done: usize,
    pub missing: Vec<MissingPair>,
}

impl RunSummary {
    /// 0 when every pair has a trace, 3 for a partial run.
    pub fn exit_code(&self) -> i32 {
        if self.missing.is_empty() {
            0
        } else {
            3
        }
    }
}

pub fn trace_path(out_dir: &Path, method: MethodId, run: u32) -> PathBuf {
    out_dir.join("traces").join(method.dir_name()).join(format!("run{run}.jsonl"))
}

/// Backend errors that say nothing about the method itself. A trace touched
/// by one is withheld so that a resume retries the pair.
fn is_infrastructure(e: &LlmError) -> bool {
    matches!(e, LlmError::Transport { .. } | LlmError::Auth(_) | LlmError::Api { .. })
}

struct Guard {
    inner: Arc<dyn LlmBackend>,
    tainted: Mutex<HashMap<String, String>>,
    abort: AtomicBool,
}

impl LlmBackend for Guard {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let result = self.inner.complete(req);
        if let Err(e) = &result {
            if is_infrastructure(e) {
                self.tainted.lock().expect("guard poisoned").entry(req.scope.key()).or_insert_with(|| e.to_string());
            }
            if matches!(e, LlmError::Auth(_)) {
                self.abort.store(true, Ordering::SeqCst);
            }
        }
        result
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

/// Reads an existing trace file, dropping a torn last line from a crash.
fn read_existing(path: &Path) -> Result<Vec<Trace>, RunError> {
    let file = match fs::File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for line in io::BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        match serde_json::from_str::<Trace>(&line) {
            Ok(t) => out.push(t),
            Err(e) if !line.trim().is_empty() => log::warn!("{}: dropping unreadable line: {e}", path.display()),
            Err(_) => {}
        }
    }
    Ok(out)
}

/// Rewrites a trace file in dataset order, keeping the first trace per question.
fn write_sorted(path: &Path, mut traces: Vec<Trace>, order: &HashMap<&str, usize>) -> Result<(), RunError> {
    traces.sort_by_key(|t| order.get(t.question_id.as_str()).copied().unwrap_or(usize::MAX));
    let mut seen = HashSet::new();
    let mut text = String::new();
    for t in traces.into_iter().filter(|t| seen.insert(t.question_id.clone())) {
        text.push_str(&t.to_json_line());
        text.push('\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn check_meta(dir: &Path, meta: &RunMeta) -> Result<(), RunError> {
    let path = dir.join(META_FILE);
    match fs::read_to_string(&path) {
        Ok(text) => {
            let old: RunMeta = serde_json::from_str(&text)
                .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
            if &old != meta {
                return Err(RunError::Config(format!(
                    "{} holds traces made with seed {} and max repairs {}; refusing to mix them with seed {} and max repairs {}",
                    dir.display(),
                    old.seed,
                    old.max_repairs,
                    meta.seed,
                    meta.max_repairs
                )));
            }
            Ok(())
        }
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            let text = serde_json::to_string_pretty(meta).expect("meta serializes");
            fs::write(&path, text).map_err(io_err(&path))
        }
        Err(e) => Err(io_err(&path)(e)),
    }
}

struct Job<'a> {
    question: &'a Question,
    run: u32,
}

enum Outcome {
    Done(Trace),
    Missing(MissingPair),
}

/// Runs `cfg.method` over every (question, run) pair not already present
/// under `cfg.out_dir`. Trace files come out byte-identical for a fixed
/// backend script and seed, whatever the worker count or resume history.
pub fn run_benchmark(
    dataset: &[Question],
    registry: &DbRegistry,
    backend: Arc<dyn LlmBackend>,
    sandbox: Arc<dyn Sandbox>,
    prompts: PromptBuilder,
    settings: PipelineSettings,
    cfg: &RunConfig,
) -> Result<RunSummary, RunError> {
    if cfg.runs == 0 {
        return Err(RunError::Config("--runs must be at least 1".into()));
    }
    let missing_dbs = registry.missing_ids(dataset);
    if !missing_dbs.is_empty() {
        return Err(RunError::Config(format!("dataset uses unregistered databases: {}", missing_dbs.join(", "))));
    }
    let mut ids = HashSet::new();
    if let Some(dup) = dataset.iter().find(|q| !ids.insert(q.id.as_str())) {
        return Err(RunError::Config(format!("question id '{}' appears twice", dup.id)));
    }

    let method_dir = cfg.out_dir.join("traces").join(cfg.method.dir_name());
    fs::create_dir_all(&method_dir).map_err(io_err(&method_dir))?;
    check_meta(&method_dir, &RunMeta { method: cfg.method, seed: cfg.seed, max_repairs: settings.max_repairs })?;

    // schema blocks, built once per database and shared read-only
    let used_dbs: BTreeSet<&str> = dataset.iter().map(|q| q.db_id.as_str()).collect();
    let mut schemas: HashMap<String, String> = HashMap::new();
    for db in &used_dbs {
        let entry = registry.get(db).map_err(|e| RunError::Config(e.to_string()))?;
        let conn = entry.open().map_err(|e| RunError::Config(e.to_string()))?;
        let ctx = introspect_schema(&conn, &SchemaAnnotations::from(entry), &cfg.schema)
            .map_err(|e| RunError::Config(format!("{db}: {e}")))?;
        schemas.insert(db.to_string(), render_context(&ctx));
    }

    let order: HashMap<&str, usize> = dataset.iter().enumerate().map(|(i, q)| (q.id.as_str(), i)).collect();
    let mut existing: BTreeMap<u32, Vec<Trace>> = BTreeMap::new();
    let mut done: HashSet<(String, u32)> = HashSet::new();
    for run in 0..cfg.runs {
        let traces: Vec<Trace> = read_existing(&trace_path(&cfg.out_dir, cfg.method, run))?
            .into_iter()
            .filter(|t| t.method == cfg.method && t.run == run && order.contains_key(t.question_id.as_str()))
            .collect();
        done.extend(traces.iter().map(|t| (t.question_id.clone(), run)));
        existing.insert(run, traces);
    }
    let jobs: Vec<Job<'_>> = (0..cfg.runs)
        .flat_map(|run| dataset.iter().map(move |q| Job { question: q, run }))
        .filter(|j| !done.contains(&(j.question.id.clone(), j.run)))
        .collect();
    let summary_done = done.len();

    let replay = cfg.out_dir.join(REPLAY_FILE);
    let recording: Arc<dyn LlmBackend> =
        Arc::new(RecordingBackend::new(backend, &replay).map_err(io_err(&replay))?);
    let guard = Arc::new(Guard { inner: recording, tainted: Mutex::new(HashMap::new()), abort: AtomicBool::new(false) });
    let engine = Engine::new(guard.clone(), sandbox, settings).with_prompts(prompts);

    let next = AtomicUsize::new(0);
    let workers = cfg.workers.max(1).min(jobs.len().max(1));
    let (tx, rx) = mpsc::channel::<Outcome>();
    let mut summary = RunSummary { already_done: summary_done, ..Default::default() };
    let mut fresh: BTreeMap<u32, Vec<Trace>> = BTreeMap::new();

    std::thread::scope(|s| -> Result<(), RunError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let (jobs, next, engine, guard, schemas) = (&jobs, &next, &engine, &guard, &schemas);
            s.spawn(move || {
                // one read-only connection per database, owned by this worker
                let mut conns: HashMap<String, Connection> = HashMap::new();
                loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(job) = jobs.get(i) else { break };
                    let outcome = run_job(job, cfg, registry, engine, guard, schemas, &mut conns);
                    if tx.send(outcome).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);

        // the single writer: append as traces arrive so a crash loses nothing
        let mut files: HashMap<u32, fs::File> = HashMap::new();
        for outcome in rx {
            match outcome {
                Outcome::Done(trace) => {
                    let path = trace_path(&cfg.out_dir, cfg.method, trace.run);
                    let file = match files.entry(trace.run) {
                        std::collections::hash_map::Entry::Occupied(e) => e.into_mut(),
                        std::collections::hash_map::Entry::Vacant(v) => v.insert(
                            fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?,
                        ),
                    };
                    writeln!(file, "{}", trace.to_json_line()).map_err(io_err(&path))?;
                    summary.written += 1;
                    fresh.entry(trace.run).or_default().push(trace);
                }
                Outcome::Missing(m) => summary.missing.push(m),
            }
        }
        Ok(())
    })?;

    for run in 0..cfg.runs {
        let mut all = existing.remove(&run).unwrap_or_default();
        all.extend(fresh.remove(&run).unwrap_or_default());
        write_sorted(&trace_path(&cfg.out_dir, cfg.method, run), all, &order)?;
    }

    summary.missing.sort_by_key(|m| (m.run, order.get(m.question_id.as_str()).copied()));
    let manifest_path = method_dir.join(RESUME_FILE);
    if summary.missing.is_empty() {
        if manifest_path.exists() {
            fs::remove_file(&manifest_path).map_err(io_err(&manifest_path))?;
        }
    } else {
        let manifest =
            ResumeManifest { method: cfg.method, runs: cfg.runs, seed: cfg.seed, missing: summary.missing.clone() };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;
    }
    Ok(summary)
}

fn run_job(
    job: &Job<'_>,
    cfg: &RunConfig,
    registry: &DbRegistry,
    engine: &Engine,
    guard: &Guard,
    schemas: &HashMap<String, String>,
    conns: &mut HashMap<String, Connection>,
) -> Outcome {
    let q = job.question;
    let missing = |reason: String| Outcome::Missing(MissingPair { question_id: q.id.clone(), run: job.run, reason });
    if guard.abort.load(Ordering::SeqCst) {
        return missing("not started: the backend rejected the credentials".into());
    }
    let entry = match registry.get(&q.db_id) {
        Ok(e) => e,
        Err(e) => return missing(e.to_string()),
    };
    if !conns.contains_key(&q.db_id) {
        match entry.open() {
            Ok(c) => {
                conns.insert(q.db_id.clone(), c);
            }
            Err(e) => return missing(e.to_string()),
        }
    }
    let ctx = QuestionContext {
        question: q,
        schema: &schemas[&q.db_id],
        conn: &conns[&q.db_id],
        db_path: &entry.path,
    };
    let seed = derive_seed(cfg.seed, &q.id, job.run, cfg.method);
    let trace = engine.run(cfg.method, &ctx, job.run, seed);
    let key = crate::llm::Scope::new(&q.id, cfg.method.to_string(), job.run).key();
    match guard.tainted.lock().expect("guard poisoned").get(&key) {
        Some(reason) => missing(format!("backend failure: {reason}")),
        None => Outcome::Done(trace),
    }
}
