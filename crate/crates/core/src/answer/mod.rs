//! Canonical answer values and the set-match equivalence used by evaluation,
//! self-consistency voting and hybrid routing.
//!
//! An answer is a multiset of tuples, each tuple a multiset of constituents.
//! Neither the order of tuples nor the order of constituents inside a tuple
//! carries meaning, so every value keeps a sorted canonical key next to the
//! sequence it was built from.

mod decimal;
mod matching;
mod parse;

use std::fmt;
use std::hash::{Hash, Hasher};

use serde::de::{self, Deserializer};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};

pub use decimal::Decimal;
pub use matching::{answers_match, majority_answer, MatchConfig, NumericMode, VoteError};
pub use parse::{canonicalize_answer, ParseError};

/// One cell of an answer tuple.
///
/// Variant order doubles as the canonical sort order: `Null < Number < Text`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constituent {
    Null,
    Number(Decimal),
    Text(String),
}

impl Constituent {
    /// Builds a text constituent. Surrounding whitespace is trimmed and text
    /// that is itself a decimal literal becomes a `Number`, since the on-disk
    /// format cannot tell the two apart.
    pub fn text(raw: &str) -> Constituent {
        let trimmed = raw.trim();
        match Decimal::parse(trimmed) {
            Some(d) => Constituent::Number(d),
            None => Constituent::Text(trimmed.to_string()),
        }
    }

    pub fn number(raw: &str) -> Option<Constituent> {
        Decimal::parse(raw.trim()).map(Constituent::Number)
    }

    pub fn int(value: i64) -> Constituent {
        Constituent::Number(Decimal::from_i64(value))
    }

    /// Non-finite floats have no decimal form; NaN is treated as missing.
    pub fn float(value: f64) -> Constituent {
        match Decimal::from_f64(value) {
            Some(d) => Constituent::Number(d),
            None if value.is_nan() => Constituent::Null,
            None if value > 0.0 => Constituent::Text("inf".into()),
            None => Constituent::Text("-inf".into()),
        }
    }

    fn write_literal(&self, out: &mut String) {
        match self {
            Constituent::Null => out.push_str("None"),
            Constituent::Number(d) => out.push_str(&d.to_string()),
            Constituent::Text(s) => {
                out.push('\'');
                for ch in s.chars() {
                    match ch {
                        '\'' => out.push_str("\\'"),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        '\t' => out.push_str("\\t"),
                        '\r' => out.push_str("\\r"),
                        c => out.push(c),
                    }
                }
                out.push('\'');
            }
        }
    }
}

impl Serialize for Constituent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Constituent::Null => serializer.serialize_none(),
            Constituent::Number(d) => serializer.serialize_str(&d.to_string()),
            Constituent::Text(s) => serializer.serialize_str(s),
        }
    }
}

impl<'de> Deserialize<'de> for Constituent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        constituent_from_json(&value).map_err(de::Error::custom)
    }
}

fn constituent_from_json(value: &serde_json::Value) -> Result<Constituent, String> {
    use serde_json::Value;
    match value {
        Value::Null => Ok(Constituent::Null),
        Value::String(s) => Ok(Constituent::text(s)),
        Value::Number(n) => {
            Constituent::number(&n.to_string()).ok_or_else(|| format!("unrepresentable number {n}"))
        }
        Value::Bool(b) => Ok(Constituent::Text(if *b { "True" } else { "False" }.into())),
        other => Err(format!("expected a scalar constituent, found {other}")),
    }
}

/// A non-empty multiset of constituents.
#[derive(Clone, Debug)]
pub struct AnswerTuple {
    items: Vec<Constituent>,
    key: Vec<Constituent>,
}

impl AnswerTuple {
    pub fn new(items: Vec<Constituent>) -> Option<AnswerTuple> {
        if items.is_empty() {
            return None;
        }
        let mut key = items.clone();
        key.sort();
        Some(AnswerTuple { items, key })
    }

    pub fn items(&self) -> &[Constituent] {
        &self.items
    }

    /// Constituents in canonical order.
    pub fn key(&self) -> &[Constituent] {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

impl PartialEq for AnswerTuple {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for AnswerTuple {}

impl Hash for AnswerTuple {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl Serialize for AnswerTuple {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.items.len()))?;
        for c in &self.items {
            seq.serialize_element(c)?;
        }
        seq.end()
    }
}

/// A multiset of tuples; may be empty.
#[derive(Clone, Debug, Default)]
pub struct AnswerSet {
    tuples: Vec<AnswerTuple>,
    key: Vec<Vec<Constituent>>,
}

impl AnswerSet {
    pub fn new(tuples: Vec<AnswerTuple>) -> AnswerSet {
        let mut key: Vec<Vec<Constituent>> = tuples.iter().map(|t| t.key.clone()).collect();
        key.sort();
        AnswerSet { tuples, key }
    }

    pub fn empty() -> AnswerSet {
        AnswerSet::default()
    }

    /// Convenience constructor; panics on an empty row.
    pub fn from_rows(rows: Vec<Vec<Constituent>>) -> AnswerSet {
        AnswerSet::new(
            rows.into_iter()
                .map(|r| AnswerTuple::new(r).expect("answer tuples are non-empty"))
                .collect(),
        )
    }

    pub fn tuples(&self) -> &[AnswerTuple] {
        &self.tuples
    }

    /// Sorted tuple keys. Equal keys iff exact set-match.
    pub fn key(&self) -> &[Vec<Constituent>] {
        &self.key
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Renders as a literal that [`canonicalize_answer`] accepts, e.g. `[('a', 1), (None,)]`.
    pub fn to_literal(&self) -> String {
        let mut out = String::from("[");
        for (i, t) in self.tuples.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            out.push('(');
            for (j, c) in t.items.iter().enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                c.write_literal(&mut out);
            }
            if t.items.len() == 1 {
                out.push(',');
            }
            out.push(')');
        }
        out.push(']');
        out
    }

    /// Canonical JSON: an array of arrays of `null` / decimal string / string.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("answer sets always serialize")
    }

    pub fn from_json_value(value: &serde_json::Value) -> Result<AnswerSet, String> {
        let rows = value
            .as_array()
            .ok_or_else(|| format!("answer must be a JSON array, found {value}"))?;
        let mut tuples = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let items = match row {
                serde_json::Value::Array(cells) => cells
                    .iter()
                    .map(constituent_from_json)
                    .collect::<Result<Vec<_>, _>>()?,
                scalar => vec![constituent_from_json(scalar)?],
            };
            tuples.push(AnswerTuple::new(items).ok_or_else(|| format!("tuple {i} is empty"))?);
        }
        Ok(AnswerSet::new(tuples))
    }

    pub fn from_json(text: &str) -> Result<AnswerSet, String> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        AnswerSet::from_json_value(&value)
    }
}

impl PartialEq for AnswerSet {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}

impl Eq for AnswerSet {}

impl Hash for AnswerSet {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key.hash(state);
    }
}

impl fmt::Display for AnswerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_literal())
    }
}

impl Serialize for AnswerSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.tuples.len()))?;
        for t in &self.tuples {
            seq.serialize_element(t)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for AnswerSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let value = serde_json::Value::deserialize(deserializer)?;
        AnswerSet::from_json_value(&value).map_err(de::Error::custom)
    }
}

/// Outcome of one method run: an answer, or a failure sentinel that never
/// matches anything (not even another failure).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    Answer(AnswerSet),
    Failure,
}

impl Prediction {
    pub fn answer(&self) -> Option<&AnswerSet> {
        match self {
            Prediction::Answer(a) => Some(a),
            Prediction::Failure => None,
        }
    }

    pub fn is_failure(&self) -> bool {
        matches!(self, Prediction::Failure)
    }

    /// True iff this is an answer that set-matches `gold`.
    pub fn matches(&self, gold: &AnswerSet, cfg: &MatchConfig) -> bool {
        self.answer().is_some_and(|a| answers_match(a, gold, cfg))
    }

    /// Pairwise agreement; failures never agree.
    pub fn agrees_with(&self, other: &Prediction, cfg: &MatchConfig) -> bool {
        match (self, other) {
            (Prediction::Answer(a), Prediction::Answer(b)) => answers_match(a, b, cfg),
            _ => false,
        }
    }
}
