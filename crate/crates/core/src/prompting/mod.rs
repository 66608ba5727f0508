//! Prompt templates, exemplars, and parsing of model output.

mod decomposition;
mod extract;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Question;

pub use decomposition::{parse_decomposition, render_decomposition, DecompositionError, Decomposition, Step, StepKind};
pub use extract::{extract_answer_text, extract_fenced, NoBlockFound};

/// Sentence every prompt carries exactly once, via `{format_rules}`.
pub const FORMAT_INSTRUCTION: &str =
    "Express the final answer as a list of tuples, with no column names, labels or explanations attached.";

/// Signature the multi-step analysis function must implement.
pub const MULTI_SIGNATURE: &str = "def compute_result(listOfDFs: List[DataFrame]) -> List[Tuple]:";
/// Signature of the single-prompt function that queries the database itself.
pub const SINGLE_SIGNATURE: &str = "def compute_result(db_path: str) -> List[Tuple]:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepairTarget {
    Sql,
    Code,
    Decomposer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    Text2Sql,
    Decomposer,
    Text2Python,
    SingleShot,
    Knowledge,
    Repair(RepairTarget),
}

impl PromptKind {
    pub const ALL: [PromptKind; 8] = [
        PromptKind::Text2Sql,
        PromptKind::Decomposer,
        PromptKind::Text2Python,
        PromptKind::SingleShot,
        PromptKind::Knowledge,
        PromptKind::Repair(RepairTarget::Sql),
        PromptKind::Repair(RepairTarget::Code),
        PromptKind::Repair(RepairTarget::Decomposer),
    ];

    /// Template file stem.
    pub fn name(self) -> &'static str {
        match self {
            PromptKind::Text2Sql => "text2sql",
            PromptKind::Decomposer => "decomposer",
            PromptKind::Text2Python => "text2python",
            PromptKind::SingleShot => "single_shot",
            PromptKind::Knowledge => "knowledge",
            PromptKind::Repair(RepairTarget::Sql) => "repair_sql",
            PromptKind::Repair(RepairTarget::Code) => "repair_code",
            PromptKind::Repair(RepairTarget::Decomposer) => "repair_decomposer",
        }
    }

    /// Placeholders a template of this kind must contain.
    fn required_placeholders(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            PromptKind::Text2Sql | PromptKind::Decomposer | PromptKind::SingleShot => {
                &[Schema, FormatRules, Exemplars, Question]
            }
            PromptKind::Text2Python => &[FormatRules, Question, Decomposition, Shapes],
            PromptKind::Knowledge => &[FormatRules, Question],
            PromptKind::Repair(_) => &[FormatRules, Question, Artifact, Error],
        }
    }

    /// Extras the caller must supply for this kind.
    fn required_extras(self) -> &'static [Placeholder] {
        use Placeholder::*;
        match self {
            PromptKind::Text2Python => &[Decomposition, Shapes],
            PromptKind::Repair(_) => &[Artifact, Error],
            _ => &[],
        }
    }

    fn embedded_template(self) -> &'static str {
        match self {
            PromptKind::Text2Sql => include_str!("../../templates/text2sql.txt"),
            PromptKind::Decomposer => include_str!("../../templates/decomposer.txt"),
            PromptKind::Text2Python => include_str!("../../templates/text2python.txt"),
            PromptKind::SingleShot => include_str!("../../templates/single_shot.txt"),
            PromptKind::Knowledge => include_str!("../../templates/knowledge.txt"),
            PromptKind::Repair(RepairTarget::Sql) => include_str!("../../templates/repair_sql.txt"),
            PromptKind::Repair(RepairTarget::Code) => include_str!("../../templates/repair_code.txt"),
            PromptKind::Repair(RepairTarget::Decomposer) => include_str!("../../templates/repair_decomposer.txt"),
        }
    }
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Placeholder {
    Schema,
    Question,
    Step,
    Shapes,
    Decomposition,
    Error,
    Artifact,
    Exemplars,
    FormatRules,
}

impl Placeholder {
    const ALL: [Placeholder; 9] = [
        Placeholder::Schema,
        Placeholder::Question,
        Placeholder::Step,
        Placeholder::Shapes,
        Placeholder::Decomposition,
        Placeholder::Error,
        Placeholder::Artifact,
        Placeholder::Exemplars,
        Placeholder::FormatRules,
    ];

    fn name(self) -> &'static str {
        match self {
            Placeholder::Schema => "schema",
            Placeholder::Question => "question",
            Placeholder::Step => "step",
            Placeholder::Shapes => "shapes",
            Placeholder::Decomposition => "decomposition",
            Placeholder::Error => "error",
            Placeholder::Artifact => "artifact",
            Placeholder::Exemplars => "exemplars",
            Placeholder::FormatRules => "format_rules",
        }
    }

    fn parse(s: &str) -> Option<Placeholder> {
        Placeholder::ALL.into_iter().find(|p| p.name() == s)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template '{template}': {reason}")]
    Template { template: String, reason: String },
    #[error("missing extras for {0} prompt")]
    MissingExtras(PromptKind),
    #[error("cannot read prompt assets: {0}")]
    Io(String),
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Literal(String),
    Slot(Placeholder),
}

/// A parsed template: literal text interleaved with placeholders. `{{` and
/// `}}` escape literal braces; any other `{name}` must be a known placeholder.
#[derive(Clone, Debug, PartialEq)]
struct Template {
    pieces: Vec<Piece>,
}

impl Template {
    fn parse(kind: PromptKind, text: &str) -> Result<Template, PromptError> {
        let err = |reason: String| PromptError::Template { template: kind.name().into(), reason };
        let mut pieces = Vec::new();
        let mut lit = String::new();
        let mut rest = text;
        while let Some(i) = rest.find(['{', '}']) {
            lit.push_str(&rest[..i]);
            let tail = &rest[i..];
            if tail.starts_with("{{") || tail.starts_with("}}") {
                lit.push_str(&tail[..1]);
                rest = &tail[2..];
                continue;
            }
            if tail.starts_with('}') {
                return Err(err("unmatched '}'".into()));
            }
            let close = tail.find('}').ok_or_else(|| err("unterminated placeholder".into()))?;
            let name = &tail[1..close];
            let slot = Placeholder::parse(name).ok_or_else(|| err(format!("unknown placeholder {{{name}}}")))?;
            if !lit.is_empty() {
                pieces.push(Piece::Literal(std::mem::take(&mut lit)));
            }
            pieces.push(Piece::Slot(slot));
            rest = &tail[close + 1..];
        }
        lit.push_str(rest);
        if !lit.is_empty() {
            pieces.push(Piece::Literal(lit));
        }
        let t = Template { pieces };
        for p in kind.required_placeholders() {
            if t.count(*p) == 0 {
                return Err(err(format!("missing placeholder {{{}}}", p.name())));
            }
        }
        if t.count(Placeholder::FormatRules) != 1 {
            return Err(err("{format_rules} must appear exactly once".into()));
        }
        if t.literal_text().contains(FORMAT_INSTRUCTION) {
            return Err(err("the format instruction must come only from {format_rules}".into()));
        }
        Ok(t)
    }

    fn count(&self, p: Placeholder) -> usize {
        self.pieces.iter().filter(|x| **x == Piece::Slot(p)).count()
    }

    fn literal_text(&self) -> String {
        self.pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Literal(s) => Some(s.as_str()),
                Piece::Slot(_) => None,
            })
            .collect()
    }

    /// Single pass: substituted values are never rescanned.
    fn fill(&self, values: &BTreeMap<Placeholder, &str>) -> String {
        let mut out = String::new();
        for p in &self.pieces {
            match p {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot(slot) => out.push_str(values.get(slot).copied().unwrap_or_default()),
            }
        }
        out
    }
}

/// One worked example shown in prompts of a given kind.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub db_id: String,
    pub kind: String,
    pub text: String,
}

/// Worked examples grouped by database; a prompt only ever shows examples
/// drawn from databases other than the one being asked about.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExemplarBank {
    entries: Vec<Exemplar>,
}

impl ExemplarBank {
    pub fn new(entries: Vec<Exemplar>) -> ExemplarBank {
        ExemplarBank { entries }
    }

    pub fn builtin() -> ExemplarBank {
        let entries = serde_json::from_str(include_str!("../../templates/exemplars.json"))
            .expect("embedded exemplars are valid JSON");
        ExemplarBank { entries }
    }

    pub fn load(path: &Path) -> Result<ExemplarBank, PromptError> {
        let text = std::fs::read_to_string(path).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        let entries = serde_json::from_str(&text).map_err(|e| PromptError::Io(format!("{}: {e}", path.display())))?;
        Ok(ExemplarBank { entries })
    }

    /// Examples for `kind`, excluding any taken from `question_db`.
    pub fn select(&self, kind: PromptKind, question_db: &str) -> Vec<&Exemplar> {
        self.entries.iter().filter(|e| e.kind == kind.name() && e.db_id != question_db).collect()
    }

    fn render(&self, kind: PromptKind, question_db: &str) -> String {
        let picked = self.select(kind, question_db);
        if picked.is_empty() {
            return String::new();
        }
        let mut out = String::from("Worked examples from a different database:\n\n");
        out.push_str(&picked.iter().map(|e| e.text.trim_end()).collect::<Vec<_>>().join("\n\n"));
        out
    }
}

/// Kind-specific material; which fields are needed depends on the kind.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PromptExtras<'a> {
    /// Multi-step SQL: the step text replaces the question.
    pub step: Option<&'a str>,
    pub shapes: Option<&'a str>,
    pub decomposition: Option<&'a str>,
    pub artifact: Option<&'a str>,
    pub error: Option<&'a str>,
}

impl<'a> PromptExtras<'a> {
    fn get(&self, p: Placeholder) -> Option<&'a str> {
        match p {
            Placeholder::Step => self.step,
            Placeholder::Shapes => self.shapes,
            Placeholder::Decomposition => self.decomposition,
            Placeholder::Artifact => self.artifact,
            Placeholder::Error => self.error,
            _ => None,
        }
    }
}

/// Parsed templates plus exemplars; built once at startup and shared.
#[derive(Clone, Debug)]
pub struct PromptBuilder {
    templates: BTreeMap<PromptKind, Template>,
    exemplars: ExemplarBank,
}

impl PromptBuilder {
    /// Templates compiled into the binary and the built-in exemplars.
    pub fn builtin() -> PromptBuilder {
        let templates = PromptKind::ALL
            .into_iter()
            .map(|k| (k, Template::parse(k, k.embedded_template()).expect("embedded templates are valid")))
            .collect();
        PromptBuilder { templates, exemplars: ExemplarBank::builtin() }
    }

    /// Reads `{kind}.txt` for every kind from `dir`, falling back to the
    /// embedded template for files that are absent. A present but invalid
    /// template is an error.
    pub fn from_dir(dir: &Path) -> Result<PromptBuilder, PromptError> {
        let mut templates = BTreeMap::new();
        for k in PromptKind::ALL {
            let path = dir.join(format!("{}.txt", k.name()));
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => k.embedded_template().to_string(),
                Err(e) => return Err(PromptError::Io(format!("{}: {e}", path.display()))),
            };
            templates.insert(k, Template::parse(k, &text)?);
        }
        let ex_path = dir.join("exemplars.json");
        let exemplars = if ex_path.exists() { ExemplarBank::load(&ex_path)? } else { ExemplarBank::builtin() };
        Ok(PromptBuilder { templates, exemplars })
    }

    pub fn with_template(mut self, kind: PromptKind, text: &str) -> Result<PromptBuilder, PromptError> {
        self.templates.insert(kind, Template::parse(kind, text)?);
        Ok(self)
    }

    pub fn with_exemplars(mut self, exemplars: ExemplarBank) -> PromptBuilder {
        self.exemplars = exemplars;
        self
    }

    /// `schema` is the rendered schema block of the question's database.
    pub fn render(
        &self,
        kind: PromptKind,
        schema: &str,
        q: &Question,
        extras: &PromptExtras<'_>,
    ) -> Result<String, PromptError> {
        if kind.required_extras().iter().any(|p| extras.get(*p).is_none()) {
            return Err(PromptError::MissingExtras(kind));
        }
        let exemplars = self.exemplars.render(kind, &q.db_id);
        let mut values = BTreeMap::new();
        values.insert(Placeholder::Schema, schema.trim_end());
        values.insert(Placeholder::Question, extras.step.unwrap_or(&q.text));
        values.insert(Placeholder::FormatRules, FORMAT_INSTRUCTION);
        values.insert(Placeholder::Exemplars, exemplars.as_str());
        for p in [Placeholder::Step, Placeholder::Shapes, Placeholder::Decomposition, Placeholder::Artifact, Placeholder::Error] {
            if let Some(v) = extras.get(p) {
                values.insert(p, v.trim_end());
            }
        }
        let text = self.templates[&kind].fill(&values);
        Ok(collapse_blank_runs(&text))
    }
}

/// Empty optional slots leave stacked blank lines behind; squeeze them.
fn collapse_blank_runs(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut blanks = 0;
    for line in text.trim_end().lines() {
        if line.trim().is_empty() {
            blanks += 1;
            if blanks > 1 {
                continue;
            }
        } else {
            blanks = 0;
        }
        out.push_str(line);
        out.push('\n');
    }
    out
}
