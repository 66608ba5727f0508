//! Materialized query results and their JSON payload form.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};

use crate::answer::{AnswerSet, AnswerTuple, Constituent};

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    Blob(Vec<u8>),
}

impl Cell {
    /// Dtype label of a single cell, pandas style.
    pub fn dtype(&self) -> Option<&'static str> {
        match self {
            Cell::Null => None,
            Cell::Integer(_) => Some("int64"),
            Cell::Real(_) => Some("float64"),
            Cell::Text(_) | Cell::Blob(_) => Some("object"),
        }
    }

    pub fn render(&self) -> String {
        match self {
            Cell::Null => "None".into(),
            Cell::Integer(i) => i.to_string(),
            Cell::Real(f) => render_real(*f),
            Cell::Text(s) => s.clone(),
            Cell::Blob(b) => format!("x'{}'", to_hex(b)),
        }
    }

    pub fn to_constituent(&self) -> Constituent {
        match self {
            Cell::Null => Constituent::Null,
            Cell::Integer(i) => Constituent::int(*i),
            Cell::Real(f) => Constituent::float(*f),
            Cell::Text(s) => Constituent::text(s),
            Cell::Blob(b) => Constituent::Text(to_hex(b)),
        }
    }
}

fn render_real(f: f64) -> String {
    let s = format!("{f}");
    if f.is_finite() && !s.contains('.') {
        format!("{s}.0")
    } else {
        s
    }
}

fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn from_hex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

impl Serialize for Cell {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Cell::Null => serializer.serialize_none(),
            Cell::Integer(i) => serializer.serialize_i64(*i),
            Cell::Real(f) if f.is_finite() => serializer.serialize_f64(*f),
            Cell::Real(f) => {
                let mut m = serializer.serialize_map(Some(1))?;
                m.serialize_entry("real", &f.to_string())?;
                m.end()
            }
            Cell::Text(s) => serializer.serialize_str(s),
            Cell::Blob(b) => {
                let mut m = serializer.serialize_map(Some(1))?;
                m.serialize_entry("blob", &to_hex(b))?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Cell {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        use serde_json::Value;
        let v = Value::deserialize(deserializer)?;
        match v {
            Value::Null => Ok(Cell::Null),
            Value::Bool(b) => Ok(Cell::Integer(b as i64)),
            Value::Number(n) => match n.as_i64() {
                Some(i) => Ok(Cell::Integer(i)),
                None => n.as_f64().map(Cell::Real).ok_or_else(|| de::Error::custom("bad number")),
            },
            Value::String(s) => Ok(Cell::Text(s)),
            Value::Object(m) => {
                if let Some(Value::String(h)) = m.get("blob") {
                    from_hex(h).map(Cell::Blob).ok_or_else(|| de::Error::custom("bad blob hex"))
                } else if let Some(Value::String(r)) = m.get("real") {
                    r.parse().map(Cell::Real).map_err(de::Error::custom)
                } else {
                    Err(de::Error::custom("unknown cell object"))
                }
            }
            Value::Array(_) => Err(de::Error::custom("arrays are not cells")),
        }
    }
}

/// Rows are kept in the order the engine returned them.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ResultTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl ResultTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> ResultTable {
        debug_assert!(rows.iter().all(|r| r.len() == columns.len()));
        ResultTable { columns, rows }
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    /// Each row becomes a tuple and each cell a constituent.
    pub fn to_answer_set(&self) -> AnswerSet {
        AnswerSet::new(
            self.rows
                .iter()
                .filter_map(|r| AnswerTuple::new(r.iter().map(Cell::to_constituent).collect()))
                .collect(),
        )
    }

    /// Majority cell type per column, ignoring nulls; ties and empty columns fall back to `object`.
    pub fn dtypes(&self) -> Vec<&'static str> {
        (0..self.columns.len())
            .map(|c| {
                let mut counts = [("int64", 0usize), ("float64", 0), ("object", 0)];
                for row in &self.rows {
                    if let Some(d) = row[c].dtype() {
                        counts.iter_mut().find(|(n, _)| *n == d).expect("known dtype").1 += 1;
                    }
                }
                let best = counts.iter().map(|&(_, n)| n).max().unwrap_or(0);
                let winners: Vec<_> = counts.iter().filter(|&&(_, n)| n == best).collect();
                if best == 0 || winners.len() > 1 {
                    "object"
                } else {
                    winners[0].0
                }
            })
            .collect()
    }

    pub fn write_payload(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(io::BufWriter::new(file), &TablePayload::from_table(self))?;
        Ok(())
    }

    pub fn read_payload(path: &Path) -> io::Result<ResultTable> {
        let file = std::fs::File::open(path)?;
        let payload: TablePayload = serde_json::from_reader(io::BufReader::new(file))?;
        payload.into_table().map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// On-disk interchange form handed to the sandbox.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TablePayload {
    pub columns: Vec<PayloadColumn>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PayloadColumn {
    pub name: String,
    pub dtype: String,
}

impl TablePayload {
    pub fn from_table(t: &ResultTable) -> TablePayload {
        TablePayload {
            columns: t
                .columns
                .iter()
                .zip(t.dtypes())
                .map(|(name, dtype)| PayloadColumn { name: name.clone(), dtype: dtype.to_string() })
                .collect(),
            rows: t.rows.clone(),
        }
    }

    pub fn into_table(self) -> Result<ResultTable, String> {
        let width = self.columns.len();
        if let Some(i) = self.rows.iter().position(|r| r.len() != width) {
            return Err(format!("row {i} has {} cells, expected {width}", self.rows[i].len()));
        }
        Ok(ResultTable { columns: self.columns.into_iter().map(|c| c.name).collect(), rows: self.rows })
    }
}

/// Right-aligned text grid, one space between columns.
pub(crate) fn render_grid(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for line in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        let cells: Vec<String> =
            line.iter().zip(&widths).map(|(c, &w)| format!("{c:>w$}")).collect();
        out.push_str(cells.join(" ").trim_end());
        out.push('\n');
    }
    out
}
