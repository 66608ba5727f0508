//! Database introspection and the schema block placed in prompts.

use std::collections::HashMap;
use std::fmt::Write as _;

use rusqlite::types::ValueRef;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ColumnNote, DbEntry};
use crate::table::render_grid;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot open database: {0}")]
    DbOpen(String),
    #[error("introspection of table '{table}' failed: {reason}")]
    Introspection { table: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemaOptions {
    /// Sample rows shown per table.
    pub k_samples: usize,
    /// Categorical columns with more distinct values than this are skipped.
    pub categorical_cap: usize,
}

impl Default for SchemaOptions {
    fn default() -> Self {
        SchemaOptions { k_samples: 3, categorical_cap: 300 }
    }
}

/// Registry-provided annotations for one database.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SchemaAnnotations {
    pub notes: Option<String>,
    pub categorical: Vec<ColumnNote>,
    pub descriptions: Vec<ColumnNote>,
    pub null_literal: Option<String>,
}

impl From<&DbEntry> for SchemaAnnotations {
    fn from(e: &DbEntry) -> Self {
        SchemaAnnotations {
            notes: e.notes.clone(),
            categorical: e.categorical.clone(),
            descriptions: e.descriptions.clone(),
            null_literal: e.null_literal.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    pub declared_type: String,
    pub description: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForeignKey {
    pub column: String,
    pub ref_table: String,
    pub ref_column: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableContext {
    pub name: String,
    pub create_sql: String,
    pub columns: Vec<ColumnInfo>,
    pub primary_key: Vec<String>,
    pub foreign_keys: Vec<ForeignKey>,
    /// First rows in storage order, rendered as text.
    pub sample_rows: Vec<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalValues {
    pub table: String,
    pub column: String,
    pub description: String,
    /// `None` when the column exceeded the cap.
    pub values: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbSchemaContext {
    pub tables: Vec<TableContext>,
    pub categorical: Vec<CategoricalValues>,
    pub notes: Option<String>,
    pub null_literal: Option<String>,
    pub k_samples: usize,
    pub categorical_cap: usize,
}

impl DbSchemaContext {
    pub fn table(&self, name: &str) -> Option<&TableContext> {
        self.tables.iter().find(|t| t.name == name)
    }
}

pub(crate) fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

fn render_value(v: ValueRef<'_>) -> String {
    match v {
        ValueRef::Null => "None".into(),
        ValueRef::Integer(i) => i.to_string(),
        ValueRef::Real(f) => crate::table::Cell::Real(f).render(),
        ValueRef::Text(t) => String::from_utf8_lossy(t).into_owned(),
        ValueRef::Blob(b) => crate::table::Cell::Blob(b.to_vec()).render(),
    }
}

/// Reads every user table with its DDL, keys, first `k_samples` rows and the
/// enumerations of registry-flagged categorical columns.
pub fn introspect_schema(
    conn: &Connection,
    annotations: &SchemaAnnotations,
    opts: &SchemaOptions,
) -> Result<DbSchemaContext, SchemaError> {
    let mut stmt = conn
        .prepare(
            "SELECT name, sql FROM sqlite_master WHERE type = 'table' \
             AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )
        .map_err(|e| SchemaError::DbOpen(e.to_string()))?;
    let listed: Vec<(String, Option<String>)> = stmt
        .query_map([], |r| Ok((r.get(0)?, r.get(1)?)))
        .and_then(|rows| rows.collect())
        .map_err(|e| SchemaError::DbOpen(e.to_string()))?;

    let descriptions: HashMap<(&str, &str), &str> = annotations
        .descriptions
        .iter()
        .map(|n| ((n.table.as_str(), n.column.as_str()), n.description.as_str()))
        .collect();

    let mut tables = Vec::with_capacity(listed.len());
    for (name, sql) in listed {
        let fail = |e: rusqlite::Error| SchemaError::Introspection { table: name.clone(), reason: e.to_string() };
        let mut columns = Vec::new();
        let mut pk: Vec<(i64, String)> = Vec::new();
        let mut info = conn.prepare(&format!("PRAGMA table_info({})", quote_ident(&name))).map_err(fail)?;
        let mut rows = info.query([]).map_err(fail)?;
        while let Some(r) = rows.next().map_err(fail)? {
            let col: String = r.get(1).map_err(fail)?;
            let ty: String = r.get::<_, Option<String>>(2).map_err(fail)?.unwrap_or_default();
            let pk_pos: i64 = r.get(5).map_err(fail)?;
            if pk_pos > 0 {
                pk.push((pk_pos, col.clone()));
            }
            let description = descriptions.get(&(name.as_str(), col.as_str())).map(|d| d.to_string());
            columns.push(ColumnInfo { name: col, declared_type: ty, description });
        }
        pk.sort();

        let mut fk_stmt =
            conn.prepare(&format!("PRAGMA foreign_key_list({})", quote_ident(&name))).map_err(fail)?;
        let foreign_keys = fk_stmt
            .query_map([], |r| {
                Ok(ForeignKey {
                    ref_table: r.get(2)?,
                    column: r.get(3)?,
                    ref_column: r.get::<_, Option<String>>(4)?.unwrap_or_default(),
                })
            })
            .and_then(|rows| rows.collect::<Result<Vec<_>, _>>())
            .map_err(fail)?;

        let mut sample_rows = Vec::new();
        if opts.k_samples > 0 {
            let mut s = conn
                .prepare(&format!("SELECT * FROM {} LIMIT {}", quote_ident(&name), opts.k_samples))
                .map_err(fail)?;
            let width = s.column_count();
            let mut rows = s.query([]).map_err(fail)?;
            while let Some(r) = rows.next().map_err(fail)? {
                let mut cells = Vec::with_capacity(width);
                for i in 0..width {
                    cells.push(render_value(r.get_ref(i).map_err(fail)?));
                }
                sample_rows.push(cells);
            }
        }

        tables.push(TableContext {
            create_sql: sql.unwrap_or_default(),
            columns,
            primary_key: pk.into_iter().map(|(_, c)| c).collect(),
            foreign_keys,
            sample_rows,
            name,
        });
    }

    let mut categorical = Vec::new();
    for note in &annotations.categorical {
        let fail =
            |e: rusqlite::Error| SchemaError::Introspection { table: note.table.clone(), reason: e.to_string() };
        let exists = tables
            .iter()
            .any(|t| t.name == note.table && t.columns.iter().any(|c| c.name == note.column));
        if !exists {
            return Err(SchemaError::Introspection {
                table: note.table.clone(),
                reason: format!("categorical column '{}' does not exist", note.column),
            });
        }
        let col = quote_ident(&note.column);
        let mut s = conn
            .prepare(&format!(
                "SELECT DISTINCT {col} FROM {} WHERE {col} IS NOT NULL ORDER BY 1 LIMIT {}",
                quote_ident(&note.table),
                opts.categorical_cap + 1
            ))
            .map_err(fail)?;
        let mut values = Vec::new();
        let mut rows = s.query([]).map_err(fail)?;
        while let Some(r) = rows.next().map_err(fail)? {
            values.push(render_value(r.get_ref(0).map_err(fail)?));
        }
        categorical.push(CategoricalValues {
            table: note.table.clone(),
            column: note.column.clone(),
            description: note.description.clone(),
            values: (values.len() <= opts.categorical_cap).then_some(values),
        });
    }

    Ok(DbSchemaContext {
        tables,
        categorical,
        notes: annotations.notes.clone(),
        null_literal: annotations.null_literal.clone(),
        k_samples: opts.k_samples,
        categorical_cap: opts.categorical_cap,
    })
}

/// Deterministic prompt block: per table the DDL, column glosses, keys and a
/// commented sample-row block; then categorical enumerations, the null
/// convention, and finally the registry notes verbatim.
pub fn render_context(ctx: &DbSchemaContext) -> String {
    let mut out = String::new();
    for t in &ctx.tables {
        out.push_str(t.create_sql.trim_end());
        out.push('\n');
        for c in t.columns.iter().filter(|c| c.description.is_some()) {
            let ty = if c.declared_type.is_empty() { String::new() } else { format!(" ({})", c.declared_type) };
            let _ = writeln!(out, "{}{ty} - {}", c.name, c.description.as_deref().unwrap_or_default());
        }
        if !t.primary_key.is_empty() || !t.foreign_keys.is_empty() {
            let mut keys = Vec::new();
            if !t.primary_key.is_empty() {
                keys.push(format!("primary key ({})", t.primary_key.join(", ")));
            }
            for fk in &t.foreign_keys {
                keys.push(format!("{} references {}({})", fk.column, fk.ref_table, fk.ref_column));
            }
            let _ = writeln!(out, "Keys: {}", keys.join("; "));
        }
        if ctx.k_samples > 0 {
            let header: Vec<String> = t.columns.iter().map(|c| c.name.clone()).collect();
            let _ = writeln!(out, "/*\n{} example rows:", t.sample_rows.len());
            let _ = writeln!(out, "SELECT * FROM {} LIMIT {};", t.name, ctx.k_samples);
            out.push_str(&render_grid(&header, &t.sample_rows));
            out.push_str("*/\n");
        }
        out.push('\n');
    }
    if !ctx.categorical.is_empty() {
        out.push_str("Possible values of categorical columns:\n");
        for c in &ctx.categorical {
            let desc = if c.description.is_empty() { String::new() } else { format!(" ({})", c.description) };
            match &c.values {
                Some(values) => {
                    let _ = writeln!(out, "- {}.{}{desc}: {}", c.table, c.column, values.join(", "));
                }
                None => {
                    let _ = writeln!(
                        out,
                        "- {}.{}{desc}: not listed, more than {} distinct values",
                        c.table, c.column, ctx.categorical_cap
                    );
                }
            }
        }
        out.push('\n');
    }
    if let Some(null) = &ctx.null_literal {
        let _ = writeln!(out, "Important: missing values are stored as the literal '{null}', not as NULL.\n");
    }
    if let Some(notes) = &ctx.notes {
        out.push_str(notes.trim_end());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(sql: &str) -> Connection {
        let c = Connection::open_in_memory().unwrap();
        c.execute_batch(sql).unwrap();
        c
    }

    #[test]
    fn fewer_rows_than_k() {
        let c = db("CREATE TABLE t(id INTEGER PRIMARY KEY, name TEXT); \
                    INSERT INTO t(name) VALUES ('a'), ('b');");
        let ctx = introspect_schema(&c, &SchemaAnnotations::default(), &SchemaOptions::default()).unwrap();
        assert_eq!(ctx.tables.len(), 1);
        assert_eq!(ctx.tables[0].sample_rows.len(), 2);
        assert_eq!(ctx.tables[0].primary_key, vec!["id"]);
        let text = render_context(&ctx);
        assert!(text.contains("/*\n2 example rows:\nSELECT * FROM t LIMIT 3;\nid name\n 1    a\n 2    b\n*/"));
        assert_eq!(text, render_context(&ctx));
    }

    #[test]
    fn empty_database_has_no_tables() {
        let c = Connection::open_in_memory().unwrap();
        let ctx = introspect_schema(&c, &SchemaAnnotations::default(), &SchemaOptions::default()).unwrap();
        assert!(ctx.tables.is_empty());
        assert_eq!(render_context(&ctx), "");
    }

    #[test]
    fn categorical_enumeration_and_cap() {
        let c = db("CREATE TABLE m(foot TEXT, code INTEGER); \
                    INSERT INTO m VALUES ('right', 1), ('left', 2), ('right', 3), (NULL, 4);");
        let ann = SchemaAnnotations {
            categorical: vec![
                ColumnNote { table: "m".into(), column: "foot".into(), description: "preferred foot".into() },
                ColumnNote { table: "m".into(), column: "code".into(), description: String::new() },
            ],
            ..Default::default()
        };
        let ctx = introspect_schema(&c, &ann, &SchemaOptions { k_samples: 0, categorical_cap: 4 }).unwrap();
        assert_eq!(ctx.categorical[0].values.as_deref(), Some(&["left".to_string(), "right".into()][..]));
        assert_eq!(ctx.categorical[1].values.as_deref().map(<[_]>::len), Some(4));
        let ctx = introspect_schema(&c, &ann, &SchemaOptions { k_samples: 0, categorical_cap: 3 }).unwrap();
        assert!(ctx.categorical[1].values.is_none());
        let text = render_context(&ctx);
        assert!(text.contains("- m.foot (preferred foot): left, right\n"));
        assert!(text.contains("- m.code: not listed, more than 3 distinct values\n"));
        assert!(!text.contains("example rows"));
    }

    #[test]
    fn unknown_categorical_column_is_an_error() {
        let c = db("CREATE TABLE m(foot TEXT);");
        let ann = SchemaAnnotations {
            categorical: vec![ColumnNote { table: "m".into(), column: "nope".into(), description: String::new() }],
            ..Default::default()
        };
        assert!(matches!(
            introspect_schema(&c, &ann, &SchemaOptions::default()),
            Err(SchemaError::Introspection { .. })
        ));
    }

    #[test]
    fn glosses_keys_null_literal_and_notes() {
        let c = db("CREATE TABLE title(tconst TEXT PRIMARY KEY, endYear TEXT); \
                    CREATE TABLE rating(tconst TEXT, r REAL, FOREIGN KEY (tconst) REFERENCES title (tconst)); \
                    INSERT INTO title VALUES ('tt1', '\\N'); INSERT INTO rating VALUES ('tt1', 5.0);");
        let ann = SchemaAnnotations {
            descriptions: vec![ColumnNote {
                table: "title".into(),
                column: "endYear".into(),
                description: "end year or \\N".into(),
            }],
            null_literal: Some("\\N".into()),
            notes: Some("- The leagues covered are: A, B\n\n".into()),
            ..Default::default()
        };
        let ctx = introspect_schema(&c, &ann, &SchemaOptions::default()).unwrap();
        let text = render_context(&ctx);
        assert!(text.contains("endYear (TEXT) - end year or \\N\n"));
        assert!(text.contains("Keys: tconst references title(tconst)\n"));
        assert!(text.contains("tconst endYear\n   tt1      \\N\n"));
        assert!(text.contains("tt1 5.0"));
        assert!(text.contains("stored as the literal '\\N'"));
        assert!(text.ends_with("- The leagues covered are: A, B\n"));
        assert_eq!(text.matches("CREATE TABLE title").count(), 1);
    }
}
