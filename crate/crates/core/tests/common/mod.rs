//! Helpers shared by the integration tests and the acceptance target.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rusqlite::Connection;

use sqlcode_core::answer::{AnswerSet, AnswerTuple, Constituent, Prediction};
use sqlcode_core::code::{SandboxOutcome, SandboxResult, StubEntry, StubSandbox};
use sqlcode_core::dataset::Question;
use sqlcode_core::llm::{LlmBackend, LlmError, LlmRequest, LlmResponse, Script, ScriptedBackend};
use sqlcode_core::pipelines::{Engine, MethodId, PipelineSettings, QuestionContext, Trace};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/mini")
}

// ---- answer sets -------------------------------------------------------

const POOL: [&str; 5] = ["N", "1", "2", "a", "b"];

fn constituent(tag: &str) -> Constituent {
    match tag {
        "N" => Constituent::Null,
        "a" | "b" => Constituent::text(tag),
        n => Constituent::int(n.parse().unwrap()),
    }
}

/// Rows of ≤3 constituents drawn from a tiny pool, so collisions are common.
pub fn random_rows<R: Rng>(rng: &mut R, max_tuples: usize) -> Vec<Vec<Constituent>> {
    let n = rng.gen_range(0..=max_tuples);
    (0..n)
        .map(|_| {
            let len = rng.gen_range(1..=3);
            (0..len).map(|_| constituent(POOL[rng.gen_range(0..POOL.len())])).collect()
        })
        .collect()
}

/// Shuffles tuples and constituents; with `mutate`, may also change one cell.
pub fn shuffled<R: Rng>(rng: &mut R, rows: &[Vec<Constituent>], mutate: bool) -> Vec<Vec<Constituent>> {
    let mut out: Vec<Vec<Constituent>> = rows.to_vec();
    for r in &mut out {
        r.shuffle(rng);
    }
    out.shuffle(rng);
    if mutate && !out.is_empty() {
        let i = rng.gen_range(0..out.len());
        let j = rng.gen_range(0..out[i].len());
        out[i][j] = constituent(POOL[rng.gen_range(0..POOL.len())]);
    }
    out
}

pub fn set(rows: &[Vec<Constituent>]) -> AnswerSet {
    AnswerSet::new(rows.iter().map(|r| AnswerTuple::new(r.clone()).unwrap()).collect())
}

fn next_permutation<T: Ord>(v: &mut [T]) -> bool {
    let Some(i) = (1..v.len()).rev().find(|&i| v[i - 1] < v[i]) else { return false };
    let j = (i..v.len()).rev().find(|&j| v[i - 1] < v[j]).unwrap();
    v.swap(i - 1, j);
    v[i..].reverse();
    true
}

/// Whether some reordering of `b` equals `a` element by element.
fn some_permutation_equal<T: Clone>(a: &[T], b: &[T], eq: impl Fn(&T, &T) -> bool) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut idx: Vec<usize> = (0..b.len()).collect();
    loop {
        if a.iter().zip(&idx).all(|(x, &k)| eq(x, &b[k])) {
            return true;
        }
        if !next_permutation(&mut idx) {
            return false;
        }
    }
}

/// Exact set-match decided by trying every tuple pairing and every
/// constituent ordering.
pub fn brute_force_match(a: &[Vec<Constituent>], b: &[Vec<Constituent>]) -> bool {
    some_permutation_equal(a, b, |x, y| some_permutation_equal(x, y, |p, q| p == q))
}

// ---- traces -------------------------------------------------------------

pub fn gold() -> AnswerSet {
    set(&[vec![Constituent::int(1)]])
}

pub fn question(id: &str, db: &str, categories: &[&str]) -> Question {
    Question {
        id: id.into(),
        db_id: db.into(),
        text: format!("question {id}"),
        categories: categories.iter().map(|c| c.to_string()).collect(),
        gold: gold(),
        reference_code: None,
    }
}

/// A synthetic trace whose prediction is either the gold answer or a failure.
pub fn trace(method: MethodId, question_id: &str, run: u32, correct: bool, used_python: bool, calls: u64) -> Trace {
    let mut t: Trace = serde_json::from_value(serde_json::json!({
        "question_id": question_id, "db_id": "fixture", "method": method.to_string(), "run": run,
        "model": "fixture-model", "used_python": used_python, "prediction": "failure", "llm_calls": calls
    }))
    .unwrap();
    if correct {
        t.prediction = Prediction::Answer(gold());
    }
    t
}

/// N questions; the reference Text2SQL run is correct on the first
/// `ref_correct`; T2SC used Python on `py_correct` of those and on
/// `py_incorrect` of the rest.
pub fn routing_fixture(
    n: usize,
    ref_correct: usize,
    py_correct: usize,
    py_incorrect: usize,
) -> (Vec<Question>, Vec<Trace>, Vec<Trace>) {
    let ds: Vec<Question> = (0..n).map(|i| question(&format!("q{i:03}"), "fixture", &[])).collect();
    let reference = (0..n).map(|i| trace(MethodId::Text2Sql, &ds[i].id, 0, i < ref_correct, false, 1)).collect();
    let t2sc = (0..n)
        .map(|i| {
            let python = if i < ref_correct { i < py_correct } else { i - ref_correct < py_incorrect };
            trace(MethodId::T2scMulti, &ds[i].id, 0, false, python, 4)
        })
        .collect();
    (ds, reference, t2sc)
}

// ---- pipelines ----------------------------------------------------------

/// Counts backend invocations independently of the engine's ledger.
pub struct Counting {
    pub inner: ScriptedBackend,
    pub calls: AtomicU64,
}

impl LlmBackend for Counting {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.complete(req)
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

/// A one-table database plus the question context the pipelines need.
pub struct Harness {
    pub dir: tempfile::TempDir,
    pub db_path: PathBuf,
    pub conn: Connection,
    pub question: Question,
    pub schema: String,
}

impl Harness {
    pub fn new() -> Harness {
        let dir = tempfile::tempdir().unwrap();
        let db_path = dir.path().join("fixture.sqlite");
        let w = Connection::open(&db_path).unwrap();
        w.execute_batch(
            "CREATE TABLE t (id INTEGER PRIMARY KEY, label TEXT, value REAL);
             INSERT INTO t VALUES (1, 'a', 1.5), (2, 'b', 2.5), (3, 'c', 3.5);",
        )
        .unwrap();
        drop(w);
        let conn = sqlcode_core::dataset::open_read_only(&db_path).unwrap();
        let mut question = question("q1", "fixture", &[]);
        question.gold = set(&[vec![Constituent::int(3)]]);
        Harness { dir, db_path, conn, question, schema: "CREATE TABLE t (id INTEGER PRIMARY KEY, label TEXT, value REAL);".into() }
    }

    pub fn run(&self, method: MethodId, script: Script, stub: Vec<StubEntry>) -> Outcome {
        let backend = Arc::new(Counting { inner: ScriptedBackend::new(script), calls: AtomicU64::new(0) });
        let sandbox = Arc::new(StubSandbox::new(stub));
        let engine = Engine::new(backend.clone(), sandbox.clone(), PipelineSettings::default());
        let ctx = QuestionContext { question: &self.question, schema: &self.schema, conn: &self.conn, db_path: &self.db_path };
        let trace = engine.run(method, &ctx, 0, 42);
        Outcome {
            invocations: backend.calls.load(Ordering::SeqCst),
            ledger_total: engine.ledger.grand_total(),
            sandbox_runs: sandbox.runs(),
            trace,
        }
    }
}

pub struct Outcome {
    pub trace: Trace,
    pub invocations: u64,
    pub ledger_total: u64,
    pub sandbox_runs: usize,
}

pub fn sql(q: &str) -> String {
    format!("```sql\n{q}\n```")
}

pub fn python(body: &str) -> String {
    format!("```python\ndef compute_result(listOfDFs):\n    {body}\n```")
}

pub const BAD_SQL: &str = "```sql\nSELECT nope FROM t\n```";

/// Stub sandbox entry: code containing `pattern` prints `result_text`.
pub fn stub_ok(pattern: &str, result_text: &str) -> StubEntry {
    StubEntry {
        pattern: pattern.into(),
        result: SandboxResult {
            outcome: SandboxOutcome::Ok { result_text: result_text.into(), truncated: false },
            duration_ms: 0,
        },
    }
}

pub fn stub_raise(pattern: &str) -> StubEntry {
    let mut e = StubEntry { pattern: pattern.into(), result: SandboxResult::harness_error("") };
    e.result.outcome = SandboxOutcome::ExecError {
        error: sqlcode_core::code::ExecErrorInfo {
            error_type: "ValueError".into(),
            message: "boom".into(),
            traceback: "File \"job\", line 2".into(),
        },
    };
    e
}

pub fn decomposition(sql_steps: usize, code: bool) -> String {
    let mut out = String::from("Plan first.\nDecomposition:\n");
    for i in 0..sql_steps {
        out.push_str(&format!("Text2SQL: fetch part {i}\n"));
    }
    if code {
        out.push_str("Python: combine the parts\n");
    }
    out
}

pub const GOOD_SQL: &str = "SELECT COUNT(*) FROM t";
pub const OK_CODE: &str = "return [(3,)]  # OKCODE";
pub const RAISING_CODE: &str = "raise ValueError('RAISES')";

pub fn code_stub() -> Vec<StubEntry> {
    vec![stub_raise("RAISES"), stub_ok("OKCODE", "[(3,)]")]
}

/// Scripted Text2SQL replies for consecutive SQL steps sharing one scope:
/// step i fails `repairs[i]` times (at most 3 counts as recoverable; 4 means
/// the budget runs out) before `good` runs. Returns (text2sql, repair_sql).
pub fn sql_replies(repairs: &[u32], good: &str) -> (Vec<String>, Vec<String>) {
    let mut first = Vec::new();
    let mut fixes = Vec::new();
    for &r in repairs {
        if r == 0 {
            first.push(sql(good));
            continue;
        }
        first.push(BAD_SQL.to_string());
        fixes.extend((1..r).map(|_| BAD_SQL.to_string()));
        fixes.push(sql(good));
    }
    (first, fixes)
}

/// Same scheme for the decomposer: `r` unparseable plans, then a valid one.
pub fn decomposer_replies(r: u32, sql_steps: usize, code: bool) -> Vec<String> {
    let mut out: Vec<String> = (0..r).map(|_| "I would just run a query.".to_string()).collect();
    out.push(decomposition(sql_steps, code));
    out
}

/// And for the code step: `r` raising programs, then one that returns.
pub fn code_replies(r: u32) -> (Vec<String>, Vec<String>) {
    if r == 0 {
        return (vec![python(OK_CODE)], Vec::new());
    }
    let mut fixes: Vec<String> = (1..r).map(|_| python(RAISING_CODE)).collect();
    fixes.push(python(OK_CODE));
    (vec![python(RAISING_CODE)], fixes)
}

pub fn t2sc_multi_script(r_dec: u32, sql_repairs: &[u32], r_code: Option<u32>) -> Script {
    use sqlcode_core::llm::CallTag;
    let (first, fixes) = sql_replies(sql_repairs, GOOD_SQL);
    let mut script = Script::default()
        .with(CallTag::Decomposer, decomposer_replies(r_dec, sql_repairs.len(), r_code.is_some()))
        .with(CallTag::Text2sql, first)
        .with(CallTag::RepairSql, fixes);
    if let Some(r) = r_code {
        let (first, fixes) = code_replies(r);
        script = script.with(CallTag::Text2python, first).with(CallTag::RepairCode, fixes);
    }
    script
}

/// Closed-form call count of a T2SC multi run where nothing exhausts its budget.
pub fn t2sc_multi_calls(r_dec: u32, sql_repairs: &[u32], r_code: Option<u32>) -> u64 {
    let sql: u32 = sql_repairs.iter().map(|r| 1 + r).sum();
    u64::from(1 + r_dec + sql + r_code.map_or(0, |r| 1 + r))
}
