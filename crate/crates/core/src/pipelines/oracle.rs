use thiserror::Error;

use super::Trace;
use crate::answer::{AnswerSet, MatchConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("traces belong to different questions ('{a}' and '{b}')")]
pub struct OracleError {
    pub a: String,
    pub b: String,
}

/// Post-hoc best of two: correct iff either prediction matches the gold answer.
pub fn oracle_combine(a: &Trace, b: &Trace, gold: &AnswerSet, cfg: &MatchConfig) -> Result<bool, OracleError> {
    if a.question_id != b.question_id {
        return Err(OracleError { a: a.question_id.clone(), b: b.question_id.clone() });
    }
    Ok(a.prediction.matches(gold, cfg) || b.prediction.matches(gold, cfg))
}
