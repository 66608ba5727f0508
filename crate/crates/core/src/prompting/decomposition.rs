use serde::{Deserialize, Serialize};
use thiserror::Error;

const MARKER: &str = "Decomposition:";
const SQL_PREFIX: &str = "Text2SQL:";
const CODE_PREFIX: &str = "Python:";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    Sql,
    Code,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub kind: StepKind,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decomposition {
    pub steps: Vec<Step>,
    /// Whatever the model wrote before the marker line.
    pub cot_preamble: String,
    /// Indices of SQL steps whose wording suggests they depend on another step.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dependency_warnings: Vec<usize>,
}

impl Decomposition {
    pub fn sql_steps(&self) -> impl Iterator<Item = &Step> {
        self.steps.iter().filter(|s| s.kind == StepKind::Sql)
    }

    pub fn has_code_step(&self) -> bool {
        self.steps.iter().any(|s| s.kind == StepKind::Code)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecompositionError {
    #[error("no line starting with \"Decomposition:\"")]
    NoMarker,
    #[error("the decomposition has no Text2SQL step")]
    NoSqlSteps,
}

/// Strips markdown emphasis, headings and list bullets around a line.
fn clean(line: &str) -> &str {
    let mut t = line.trim();
    t = t.trim_start_matches(['#', '*', '_', '>']).trim_start();
    if let Some(rest) = t.strip_prefix("- ") {
        t = rest.trim_start();
    } else {
        let digits = t.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 && matches!(t.as_bytes().get(digits), Some(b'.' | b')')) {
            t = t[digits + 1..].trim_start();
        }
    }
    t
}

fn strip_label<'a>(line: &'a str, label: &str) -> Option<&'a str> {
    let head = line.get(..label.len())?;
    head.eq_ignore_ascii_case(label).then(|| line[label.len()..].trim_start_matches(['*', '_']).trim())
}

fn looks_dependent(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    ["previous step", "prior step", "identified above", "from step", "above step", "step above", "earlier step"]
        .iter()
        .any(|p| lower.contains(p))
}

pub fn parse_decomposition(text: &str) -> Result<Decomposition, DecompositionError> {
    let lines: Vec<&str> = text.lines().collect();
    // the last marker wins: reasoning may mention the word before the real plan
    let marker = lines
        .iter()
        .rposition(|l| strip_label(clean(l), MARKER).is_some())
        .ok_or(DecompositionError::NoMarker)?;
    let cot_preamble = lines[..marker].join("\n").trim().to_string();
    let inline = strip_label(clean(lines[marker]), MARKER).unwrap_or_default();

    let mut steps = Vec::new();
    for raw in std::iter::once(inline).chain(lines[marker + 1..].iter().copied()) {
        let line = clean(raw);
        if line.is_empty() {
            continue;
        }
        let step = if let Some(t) = strip_label(line, SQL_PREFIX) {
            Step { kind: StepKind::Sql, text: t.to_string() }
        } else if let Some(t) = strip_label(line, CODE_PREFIX) {
            Step { kind: StepKind::Code, text: t.to_string() }
        } else {
            log::warn!("skipping decomposition line without a step prefix: {line:?}");
            continue;
        };
        if step.text.is_empty() {
            log::warn!("skipping empty {:?} step", step.kind);
            continue;
        }
        steps.push(step);
    }
    if !steps.iter().any(|s| s.kind == StepKind::Sql) {
        return Err(DecompositionError::NoSqlSteps);
    }
    let dependency_warnings: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter(|(_, s)| s.kind == StepKind::Sql && looks_dependent(&s.text))
        .map(|(i, _)| i)
        .collect();
    for i in &dependency_warnings {
        log::warn!("SQL step {i} appears to depend on another step: {:?}", steps[*i].text);
    }
    Ok(Decomposition { steps, cot_preamble, dependency_warnings })
}

/// Plan lines in the form the decomposer is asked to produce.
pub fn render_decomposition(d: &Decomposition) -> String {
    d.steps
        .iter()
        .map(|s| match s.kind {
            StepKind::Sql => format!("{SQL_PREFIX} {}", s.text),
            StepKind::Code => format!("{CODE_PREFIX} {}", s.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}
