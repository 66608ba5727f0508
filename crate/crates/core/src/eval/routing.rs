use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::{check_unique, index, EvalError};
use crate::answer::MatchConfig;
use crate::dataset::Question;
use crate::pipelines::Trace;

/// How often one (model, method) pair sent questions to the Python step, on
/// the full set and relative to it on the subsets split by whether the
/// reference Text2SQL run was correct.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutingRow {
    pub model: String,
    pub method: String,
    pub questions: usize,
    pub reference_correct: usize,
    pub reference_incorrect: usize,
    pub pct_python_full: f64,
    /// Subset percentage minus the full-set percentage; `None` for an empty subset.
    pub delta_correct: Option<f64>,
    pub delta_incorrect: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub struct RoutingTable {
    pub reference_run: u32,
    pub rows: Vec<RoutingRow>,
}

impl RoutingTable {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("routing tables always serialize")
    }
}

/// `t2sc` may hold several runs; each (question, run) trace counts once.
/// The reference verdict of a question comes from its Text2SQL trace with
/// run index `reference_run`.
pub fn routing_analysis(
    t2sc: &[Trace],
    reference: &[Trace],
    dataset: &[Question],
    cfg: &MatchConfig,
    reference_run: u32,
) -> Result<RoutingTable, EvalError> {
    let questions = index(dataset);
    check_unique(t2sc)?;
    check_unique(reference)?;
    let mut verdict: HashMap<&str, bool> = HashMap::new();
    for t in reference.iter().filter(|t| t.run == reference_run) {
        let q = questions.get(t.question_id.as_str()).ok_or_else(|| EvalError::UnknownQuestion(t.question_id.clone()))?;
        verdict.insert(&t.question_id, t.prediction.matches(&q.gold, cfg));
    }

    let mut groups: BTreeMap<(String, String), Vec<&Trace>> = BTreeMap::new();
    for t in t2sc {
        if !questions.contains_key(t.question_id.as_str()) {
            return Err(EvalError::UnknownQuestion(t.question_id.clone()));
        }
        groups.entry((t.model.clone(), t.method.to_string())).or_default().push(t);
    }

    let mut table = RoutingTable { reference_run, rows: Vec::new() };
    for ((model, method), traces) in groups {
        let covered: BTreeSet<&str> = traces.iter().map(|t| t.question_id.as_str()).collect();
        let refs: BTreeSet<&str> = verdict.keys().copied().collect();
        if covered != refs {
            return Err(EvalError::CoverageMismatch(format!(
                "{model}/{method} covers {} questions, reference run {reference_run} covers {}",
                covered.len(),
                refs.len()
            )));
        }
        let share = |keep: &dyn Fn(&Trace) -> bool| -> Option<f64> {
            let kept: Vec<_> = traces.iter().filter(|t| keep(t)).collect();
            (!kept.is_empty()).then(|| 100.0 * kept.iter().filter(|t| t.used_python).count() as f64 / kept.len() as f64)
        };
        let full = share(&|_| true).unwrap_or(0.0);
        let correct = share(&|t| verdict[t.question_id.as_str()]);
        let incorrect = share(&|t| !verdict[t.question_id.as_str()]);
        let n_correct = covered.iter().filter(|q| verdict[*q]).count();
        table.rows.push(RoutingRow {
            model,
            method,
            questions: covered.len(),
            reference_correct: n_correct,
            reference_incorrect: covered.len() - n_correct,
            pct_python_full: full,
            delta_correct: correct.map(|c| c - full),
            delta_incorrect: incorrect.map(|i| i - full),
        });
    }
    Ok(table)
}
