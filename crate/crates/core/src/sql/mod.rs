//! Running generated SQL against read-only databases.

mod repair;
mod screen;
mod shape;

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::ValueRef;
use rusqlite::{Connection, ErrorCode};
use serde::{Deserialize, Serialize};

use crate::table::{Cell, ResultTable};

pub use repair::{run_sql_step_with_repair, SqlAttempt, SqlAttemptOutcome, SqlExecution, SqlStepInput};
pub use screen::single_statement;
pub use shape::{shape_of, TableShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SqlLimits {
    pub timeout: Duration,
    /// Upper bound on rows × columns materialized from one query.
    pub max_cells: usize,
}

impl Default for SqlLimits {
    fn default() -> Self {
        SqlLimits { timeout: Duration::from_secs(120), max_cells: 2_000_000 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SqlOutcome {
    Ok(ResultTable),
    /// Engine message verbatim, or a screen/limit message of our own.
    Error(String),
    Timeout,
}

/// Opens `query` on `conn` and materializes the full result, interrupting
/// it once `limits.timeout` has elapsed.
pub fn execute_sql(conn: &Connection, query: &str, limits: &SqlLimits) -> SqlOutcome {
    if let Err(msg) = single_statement(query) {
        return SqlOutcome::Error(msg);
    }
    let deadline = Instant::now() + limits.timeout;
    let timed_out = Arc::new(AtomicBool::new(false));
    let flag = timed_out.clone();
    conn.progress_handler(
        1000,
        Some(move || {
            if Instant::now() >= deadline {
                flag.store(true, Ordering::SeqCst);
                true
            } else {
                false
            }
        }),
    );
    let result = materialize(conn, query, limits.max_cells);
    conn.progress_handler(0, None::<fn() -> bool>);
    match result {
        Ok(t) => SqlOutcome::Ok(t),
        Err(_) if timed_out.load(Ordering::SeqCst) => SqlOutcome::Timeout,
        Err(Failure::Engine(e)) if is_interrupt(&e) => SqlOutcome::Timeout,
        Err(Failure::Engine(e)) => SqlOutcome::Error(engine_message(&e)),
        Err(Failure::TooLarge) => SqlOutcome::Error(format!(
            "result too large: more than {} cells; add filtering or aggregation to the query",
            limits.max_cells
        )),
    }
}

enum Failure {
    Engine(rusqlite::Error),
    TooLarge,
}

impl From<rusqlite::Error> for Failure {
    fn from(e: rusqlite::Error) -> Self {
        Failure::Engine(e)
    }
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(e, rusqlite::Error::SqliteFailure(f, _) if f.code == ErrorCode::OperationInterrupted)
}

fn engine_message(e: &rusqlite::Error) -> String {
    match e {
        rusqlite::Error::SqliteFailure(_, Some(msg)) => msg.clone(),
        other => other.to_string(),
    }
}

fn materialize(conn: &Connection, query: &str, max_cells: usize) -> Result<ResultTable, Failure> {
    let mut stmt = conn.prepare(query)?;
    let columns: Vec<String> = stmt.column_names().into_iter().map(String::from).collect();
    let width = columns.len();
    let mut rows = Vec::new();
    let mut q = stmt.query([])?;
    while let Some(r) = q.next()? {
        if (rows.len() + 1) * width.max(1) > max_cells {
            return Err(Failure::TooLarge);
        }
        let mut cells = Vec::with_capacity(width);
        for i in 0..width {
            cells.push(match r.get_ref(i)? {
                ValueRef::Null => Cell::Null,
                ValueRef::Integer(v) => Cell::Integer(v),
                ValueRef::Real(v) => Cell::Real(v),
                ValueRef::Text(t) => Cell::Text(String::from_utf8_lossy(t).into_owned()),
                ValueRef::Blob(b) => Cell::Blob(b.to_vec()),
            });
        }
        rows.push(cells);
    }
    Ok(ResultTable::new(columns, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_literal() {
        let c = Connection::open_in_memory().unwrap();
        assert_eq!(
            execute_sql(&c, "SELECT 1 AS x", &SqlLimits::default()),
            SqlOutcome::Ok(ResultTable::new(vec!["x".into()], vec![vec![Cell::Integer(1)]]))
        );
    }

    #[test]
    fn syntax_error_is_reported_verbatim() {
        let c = Connection::open_in_memory().unwrap();
        match execute_sql(&c, "SELEC 1", &SqlLimits::default()) {
            SqlOutcome::Error(m) => assert!(m.contains("syntax error"), "{m}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn second_statement_is_rejected() {
        let c = Connection::open_in_memory().unwrap();
        assert!(matches!(execute_sql(&c, "SELECT 1; SELECT 2", &SqlLimits::default()), SqlOutcome::Error(_)));
        assert!(matches!(execute_sql(&c, "SELECT 1;  -- done", &SqlLimits::default()), SqlOutcome::Ok(_)));
    }

    #[test]
    fn cell_cap() {
        let c = Connection::open_in_memory().unwrap();
        let q = "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n WHERE i < 100) SELECT i, i FROM n";
        let limits = SqlLimits { max_cells: 150, ..Default::default() };
        match execute_sql(&c, q, &limits) {
            SqlOutcome::Error(m) => assert!(m.starts_with("result too large")),
            other => panic!("{other:?}"),
        }
        let limits = SqlLimits { max_cells: 200, ..Default::default() };
        assert!(matches!(execute_sql(&c, q, &limits), SqlOutcome::Ok(t) if t.row_count() == 100));
    }

    #[test]
    fn endless_query_times_out() {
        let c = Connection::open_in_memory().unwrap();
        let q = "WITH RECURSIVE n(i) AS (SELECT 1 UNION ALL SELECT i + 1 FROM n) SELECT count(*) FROM n";
        let limits = SqlLimits { timeout: Duration::from_millis(200), ..Default::default() };
        let started = Instant::now();
        assert_eq!(execute_sql(&c, q, &limits), SqlOutcome::Timeout);
        assert!(started.elapsed() < Duration::from_secs(5));
        // the handler is removed afterwards
        assert!(matches!(execute_sql(&c, "SELECT 1", &limits), SqlOutcome::Ok(_)));
    }
}
