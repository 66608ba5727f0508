use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::{execute_sql, SqlLimits, SqlOutcome};
use crate::dataset::Question;
use crate::llm::{CallTag, LlmClient};
use crate::prompting::{extract_fenced, PromptBuilder, PromptExtras, PromptKind, RepairTarget};
use crate::table::ResultTable;

/// Longest raw reply echoed back in a repair prompt when no query could be extracted.
const MAX_ECHO: usize = 4000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum SqlAttemptOutcome {
    Ok { columns: Vec<String>, row_count: usize },
    Error { message: String },
    Timeout,
    /// The backend itself failed; no further attempts follow.
    LlmError { message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqlAttempt {
    /// Empty when no query could be extracted from the reply.
    pub query: String,
    pub outcome: SqlAttemptOutcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SqlExecution {
    pub step_text: String,
    pub attempts: Vec<SqlAttempt>,
    pub ok: bool,
    /// The final table; kept in memory only.
    #[serde(skip)]
    pub table: Option<ResultTable>,
}

impl SqlExecution {
    pub fn repairs(&self) -> usize {
        self.attempts.len().saturating_sub(1)
    }
}

/// What to ask for: the whole question, or one step of a decomposition.
#[derive(Clone, Copy, Debug)]
pub struct SqlStepInput<'a> {
    pub question: &'a Question,
    pub step: Option<&'a str>,
    /// Rendered schema block.
    pub schema: &'a str,
}

fn truncate(s: &str, max: usize) -> &str {
    match s.char_indices().nth(max) {
        Some((i, _)) => &s[..i],
        None => s,
    }
}

/// One generation call, then up to `max_repairs` repair calls, stopping at
/// the first query that runs.
pub fn run_sql_step_with_repair(
    input: SqlStepInput<'_>,
    conn: &Connection,
    prompts: &PromptBuilder,
    client: &LlmClient,
    limits: &SqlLimits,
    max_repairs: u32,
) -> SqlExecution {
    let step_text = input.step.unwrap_or(&input.question.text).to_string();
    let mut exec = SqlExecution { step_text, attempts: Vec::new(), ok: false, table: None };
    // (artifact, error) of the previous failed attempt
    let mut last_failure: Option<(String, String)> = None;

    for attempt in 0..=max_repairs {
        let (kind, tag) = if attempt == 0 {
            (PromptKind::Text2Sql, CallTag::Text2sql)
        } else {
            (PromptKind::Repair(RepairTarget::Sql), CallTag::RepairSql)
        };
        let extras = match &last_failure {
            Some((artifact, error)) => PromptExtras {
                step: input.step,
                artifact: Some(artifact),
                error: Some(error),
                ..Default::default()
            },
            None => PromptExtras { step: input.step, ..Default::default() },
        };
        let prompt = prompts
            .render(kind, input.schema, input.question, &extras)
            .expect("sql prompts only need extras supplied here");
        let reply = match client.complete(tag, prompt) {
            Ok(r) => r.text,
            Err(e) => {
                exec.attempts.push(SqlAttempt {
                    query: String::new(),
                    outcome: SqlAttemptOutcome::LlmError { message: e.to_string() },
                });
                return exec;
            }
        };
        let query = match extract_fenced(&reply, "sql") {
            Ok(q) => q,
            Err(e) => {
                let message = e.to_string();
                exec.attempts.push(SqlAttempt {
                    query: String::new(),
                    outcome: SqlAttemptOutcome::Error { message: message.clone() },
                });
                last_failure = Some((truncate(&reply, MAX_ECHO).to_string(), message));
                continue;
            }
        };
        match execute_sql(conn, &query, limits) {
            SqlOutcome::Ok(table) => {
                exec.attempts.push(SqlAttempt {
                    query,
                    outcome: SqlAttemptOutcome::Ok { columns: table.columns.clone(), row_count: table.row_count() },
                });
                exec.ok = true;
                exec.table = Some(table);
                return exec;
            }
            SqlOutcome::Error(message) => {
                exec.attempts.push(SqlAttempt { query: query.clone(), outcome: SqlAttemptOutcome::Error { message: message.clone() } });
                last_failure = Some((query, message));
            }
            SqlOutcome::Timeout => {
                let message = format!(
                    "the query did not finish within {} s and was interrupted; write a more efficient query",
                    limits.timeout.as_secs_f64()
                );
                exec.attempts.push(SqlAttempt { query: query.clone(), outcome: SqlAttemptOutcome::Timeout });
                last_failure = Some((query, message));
            }
        }
    }
    exec
}
