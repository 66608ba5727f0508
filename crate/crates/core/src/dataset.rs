//! Question sets (JSON lines) and the registry of databases they refer to.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{canonicalize_answer, AnswerSet};

/// Reasoning categories used to tag questions. Tags are free strings; this
/// list is informational and not enforced.
pub const CATEGORY_VOCABULARY: [&str; 12] = [
    "Stat./Math. Operations",
    "Analytics over Non-entries in Database",
    "Nested Queries",
    "String Manipulation",
    "Calculations over Aggregate Analytics",
    "Complex Columns",
    "Temporal Reasoning",
    "Complex Filtering",
    "Unit Conversions",
    "Scenario Understanding",
    "Time Series Analysis",
    "Commonsense Knowledge",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("line {line}: {reason}")]
    Format { line: usize, reason: String },
    #[error("duplicate question id '{0}'")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub id: String,
    pub db_id: String,
    #[serde(rename = "question")]
    pub text: String,
    #[serde(default)]
    pub categories: Vec<String>,
    #[serde(rename = "answer", deserialize_with = "deserialize_gold")]
    pub gold: AnswerSet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_code: Option<String>,
}

/// Gold answers may be canonical JSON or a tuple-list literal in a string.
fn deserialize_gold<'de, D: serde::Deserializer<'de>>(d: D) -> Result<AnswerSet, D::Error> {
    use serde::de::Error;
    let value = serde_json::Value::deserialize(d)?;
    match &value {
        serde_json::Value::String(s) => canonicalize_answer(s).map_err(D::Error::custom),
        v => AnswerSet::from_json_value(v).map_err(D::Error::custom),
    }
}

pub fn parse_dataset<R: BufRead>(reader: R) -> Result<Vec<Question>, DatasetError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let q: Question = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Format { line: i + 1, reason: e.to_string() })?;
        if !seen.insert(q.id.clone()) {
            return Err(DatasetError::DuplicateId(q.id));
        }
        out.push(q);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Question>, DatasetError> {
    parse_dataset(BufReader::new(File::open(path)?))
}

pub fn write_dataset<W: Write>(questions: &[Question], mut out: W) -> io::Result<()> {
    for q in questions {
        serde_json::to_writer(&mut out, q)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Questions per category tag; a question counts once in each of its tags.
pub fn category_histogram(questions: &[Question]) -> BTreeMap<String, usize> {
    let mut hist = BTreeMap::new();
    for q in questions {
        let tags: HashSet<&String> = q.categories.iter().collect();
        for tag in tags {
            *hist.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    hist
}

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("cannot read registry {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("malformed registry: {0}")]
    Format(String),
    #[error("database '{db_id}' at {path} cannot be opened: {reason}")]
    DbOpen { db_id: String, path: PathBuf, reason: String },
    #[error("unknown database '{0}'")]
    UnknownDb(String),
    #[error("cannot read {path}: {source}")]
    Aux { path: PathBuf, source: io::Error },
}

/// Column flagged as categorical, or simply described, in the registry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnNote {
    pub table: String,
    pub column: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, Deserialize)]
struct RegistryEntryFile {
    path: PathBuf,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    notes_path: Option<PathBuf>,
    #[serde(default)]
    categorical_path: Option<PathBuf>,
    #[serde(default)]
    descriptions_path: Option<PathBuf>,
    #[serde(default)]
    null_literal: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DbEntry {
    pub db_id: String,
    pub path: PathBuf,
    pub name: String,
    /// Domain guidance appended verbatim to prompt contexts.
    pub notes: Option<String>,
    pub categorical: Vec<ColumnNote>,
    pub descriptions: Vec<ColumnNote>,
    /// How the database spells missing values, e.g. `\N`.
    pub null_literal: Option<String>,
}

impl DbEntry {
    pub fn open(&self) -> Result<Connection, RegistryError> {
        open_read_only(&self.path).map_err(|e| RegistryError::DbOpen {
            db_id: self.db_id.clone(),
            path: self.path.clone(),
            reason: e.to_string(),
        })
    }
}

pub fn open_read_only(path: &Path) -> rusqlite::Result<Connection> {
    let conn = Connection::open_with_flags(
        path,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX | OpenFlags::SQLITE_OPEN_URI,
    )?;
    conn.pragma_update(None, "query_only", true)?;
    // fails on files that are not databases
    conn.query_row("SELECT count(*) FROM sqlite_master", [], |r| r.get::<_, i64>(0))?;
    Ok(conn)
}

#[derive(Clone, Debug, Default)]
pub struct DbRegistry {
    entries: BTreeMap<String, DbEntry>,
}

impl DbRegistry {
    /// Reads the JSON registry `{db_id: {path, name, notes_path, ...}}`.
    /// Relative paths resolve against the registry file's directory and every
    /// database is opened read-only once to check it.
    pub fn load(path: &Path) -> Result<DbRegistry, RegistryError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| RegistryError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        DbRegistry::from_json(&text, base)
    }

    pub fn from_json(text: &str, base: &Path) -> Result<DbRegistry, RegistryError> {
        let raw: BTreeMap<String, RegistryEntryFile> =
            serde_json::from_str(text).map_err(|e| RegistryError::Format(e.to_string()))?;
        let mut registry = DbRegistry::default();
        for (db_id, e) in raw {
            let read_aux = |p: &Path| {
                let full = base.join(p);
                std::fs::read_to_string(&full).map_err(|source| RegistryError::Aux { path: full, source })
            };
            let read_notes = |p: &Option<PathBuf>| -> Result<Vec<ColumnNote>, RegistryError> {
                match p {
                    None => Ok(Vec::new()),
                    Some(p) => serde_json::from_str(&read_aux(p)?)
                        .map_err(|e| RegistryError::Format(format!("{}: {e}", p.display()))),
                }
            };
            let entry = DbEntry {
                path: base.join(&e.path),
                name: e.name.clone().unwrap_or_else(|| db_id.clone()),
                notes: e.notes_path.as_deref().map(read_aux).transpose()?,
                categorical: read_notes(&e.categorical_path)?,
                descriptions: read_notes(&e.descriptions_path)?,
                null_literal: e.null_literal.clone(),
                db_id: db_id.clone(),
            };
            registry.register(entry)?;
        }
        Ok(registry)
    }

    pub fn register(&mut self, entry: DbEntry) -> Result<(), RegistryError> {
        if !entry.path.is_file() {
            return Err(RegistryError::DbOpen {
                db_id: entry.db_id.clone(),
                path: entry.path.clone(),
                reason: "file does not exist".into(),
            });
        }
        entry.open()?;
        self.entries.insert(entry.db_id.clone(), entry);
        Ok(())
    }

    pub fn get(&self, db_id: &str) -> Result<&DbEntry, RegistryError> {
        self.entries.get(db_id).ok_or_else(|| RegistryError::UnknownDb(db_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Ids referenced by `questions` that the registry does not know.
    pub fn missing_ids<'q>(&self, questions: &'q [Question]) -> Vec<&'q str> {
        let mut missing: Vec<&str> = questions
            .iter()
            .map(|q| q.db_id.as_str())
            .filter(|id| !self.entries.contains_key(*id))
            .collect();
        missing.sort_unstable();
        missing.dedup();
        missing
    }
}
