//! Execution-accuracy scoring, oracle rows, routing analysis and exports.

mod export;
mod routing;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::MatchConfig;
use crate::dataset::Question;
use crate::pipelines::{oracle_combine, Trace};

pub use export::{report_markdown, routing_markdown};
pub use routing::{routing_analysis, RoutingRow, RoutingTable};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace refers to unknown question '{0}'")]
    UnknownQuestion(String),
    #[error("more than one trace for question '{question}' in run {run} of {method}")]
    DuplicateTrace { method: String, question: String, run: u32 },
    #[error("trace sets do not cover the same questions: {0}")]
    CoverageMismatch(String),
    #[error("{path}: {reason}")]
    Read { path: String, reason: String },
}

/// Reads a JSONL trace file.
pub fn read_traces(path: &Path) -> Result<Vec<Trace>, EvalError> {
    let err = |reason: String| EvalError::Read { path: path.display().to_string(), reason };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut out = Vec::new();
    for (i, line) in io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| err(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Scores for one method (or one oracle pairing).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Question-weighted accuracy, averaged over runs.
    pub overall: f64,
    pub per_db: BTreeMap<String, f64>,
    pub per_category: BTreeMap<String, f64>,
    pub mean_calls: f64,
    pub runs_averaged: usize,
    pub questions: usize,
    /// Accuracy of each run, in run order.
    pub per_run: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct Report {
    pub methods: Vec<MethodReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl Report {
    pub fn method(&self, name: &str) -> Option<&MethodReport> {
        self.methods.iter().find(|m| m.method == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    pub fn from_json(text: &str) -> Result<Report, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// One scored (question, run).
#[derive(Clone, Debug)]
struct Verdict {
    question: String,
    run: u32,
    correct: bool,
    calls: u64,
}

fn index(dataset: &[Question]) -> HashMap<&str, &Question> {
    dataset.iter().map(|q| (q.id.as_str(), q)).collect()
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

fn pct(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

/// Per-run accuracy over `verdicts` restricted by `keep`, averaged over the
/// runs where the restriction is non-empty.
fn averaged(by_run: &BTreeMap<u32, Vec<&Verdict>>, keep: impl Fn(&Verdict) -> bool) -> Option<f64> {
    mean(by_run.values().filter_map(|vs| {
        let kept: Vec<_> = vs.iter().filter(|v| keep(v)).collect();
        (!kept.is_empty()).then(|| pct(kept.iter().filter(|v| v.correct).count(), kept.len()))
    }))
}

fn aggregate(
    method: &str,
    verdicts: &[Verdict],
    questions: &HashMap<&str, &Question>,
    warnings: &mut Vec<String>,
) -> MethodReport {
    let mut by_run: BTreeMap<u32, Vec<&Verdict>> = BTreeMap::new();
    for v in verdicts {
        by_run.entry(v.run).or_default().push(v);
    }
    let all: BTreeSet<&str> = verdicts.iter().map(|v| v.question.as_str()).collect();
    for (run, vs) in &by_run {
        if vs.len() < all.len() {
            warnings.push(format!(
                "{method}: run {run} covers {} of {} questions; averaging over available runs",
                vs.len(),
                all.len()
            ));
        }
    }
    let db_of = |v: &Verdict| questions[v.question.as_str()].db_id.as_str();
    let dbs: BTreeSet<&str> = verdicts.iter().map(db_of).collect();
    let categories: BTreeSet<&str> = verdicts
        .iter()
        .flat_map(|v| questions[v.question.as_str()].categories.iter().map(String::as_str))
        .collect();
    MethodReport {
        method: method.to_string(),
        overall: averaged(&by_run, |_| true).unwrap_or(0.0),
        per_db: dbs
            .iter()
            .filter_map(|db| averaged(&by_run, |v| db_of(v) == *db).map(|a| (db.to_string(), a)))
            .collect(),
        per_category: categories
            .iter()
            .filter_map(|c| {
                averaged(&by_run, |v| questions[v.question.as_str()].categories.iter().any(|x| x == c))
                    .map(|a| (c.to_string(), a))
            })
            .collect(),
        mean_calls: mean(verdicts.iter().map(|v| v.calls as f64)).unwrap_or(0.0),
        runs_averaged: by_run.len(),
        questions: all.len(),
        per_run: by_run.values().map(|vs| pct(vs.iter().filter(|v| v.correct).count(), vs.len())).collect(),
    }
}

fn check_unique<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> Result<(), EvalError> {
    let mut seen = BTreeSet::new();
    for t in traces {
        if !seen.insert((t.method.to_string(), t.question_id.as_str(), t.run)) {
            return Err(EvalError::DuplicateTrace {
                method: t.method.to_string(),
                question: t.question_id.clone(),
                run: t.run,
            });
        }
    }
    Ok(())
}

/// A question is correct in a run iff its prediction set-matches the gold
/// answer; Failure is never correct. Traces may mix methods.
pub fn score_traces(traces: &[Trace], dataset: &[Question], cfg: &MatchConfig) -> Result<Report, EvalError> {
    let questions = index(dataset);
    check_unique(traces)?;
    let mut grouped: BTreeMap<String, Vec<Verdict>> = BTreeMap::new();
    for t in traces {
        let q = questions.get(t.question_id.as_str()).ok_or_else(|| EvalError::UnknownQuestion(t.question_id.clone()))?;
        grouped.entry(t.method.to_string()).or_default().push(Verdict {
            question: t.question_id.clone(),
            run: t.run,
            correct: t.prediction.matches(&q.gold, cfg),
            calls: t.llm_calls,
        });
    }
    let mut report = Report::default();
    for (method, verdicts) in &grouped {
        let m = aggregate(method, verdicts, &questions, &mut report.warnings);
        report.methods.push(m);
    }
    Ok(report)
}

/// Oracle row over two methods' traces, paired by (question, run).
pub fn score_oracle(
    a: &[Trace],
    b: &[Trace],
    dataset: &[Question],
    cfg: &MatchConfig,
) -> Result<MethodReport, EvalError> {
    let questions = index(dataset);
    check_unique(a)?;
    check_unique(b)?;
    let key = |t: &Trace| (t.question_id.clone(), t.run);
    let b_index: BTreeMap<(String, u32), &Trace> = b.iter().map(|t| (key(t), t)).collect();
    if a.len() != b.len() || a.iter().any(|t| !b_index.contains_key(&key(t))) {
        return Err(EvalError::CoverageMismatch(format!(
            "{} traces against {}, or differing (question, run) pairs",
            a.len(),
            b.len()
        )));
    }
    let mut verdicts = Vec::with_capacity(a.len());
    for ta in a {
        let q = questions.get(ta.question_id.as_str()).ok_or_else(|| EvalError::UnknownQuestion(ta.question_id.clone()))?;
        let tb = b_index[&key(ta)];
        let correct = oracle_combine(ta, tb, &q.gold, cfg).map_err(|e| EvalError::CoverageMismatch(e.to_string()))?;
        verdicts.push(Verdict { question: ta.question_id.clone(), run: ta.run, correct, calls: ta.llm_calls + tb.llm_calls });
    }
    let names = |ts: &[Trace]| ts.first().map(|t| t.method.to_string()).unwrap_or_default();
    let label = format!("oracle({}+{})", names(a), names(b));
    Ok(aggregate(&label, &verdicts, &questions, &mut Vec::new()))
}
