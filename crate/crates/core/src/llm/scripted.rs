use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{CallTag, LlmBackend, LlmError, LlmRequest, LlmResponse, ReplayRecord};

type TagScript = BTreeMap<CallTag, Vec<String>>;

/// Canned responses keyed by tag and per-tag occurrence index.
///
/// Lookup order for a request is: its exact scope (`question#method#run`),
/// then its question id, then the defaults. The first level that defines the
/// request's tag is the one used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub default: TagScript,
    #[serde(default)]
    pub questions: BTreeMap<String, TagScript>,
    #[serde(default)]
    pub scopes: BTreeMap<String, TagScript>,
}

impl Script {
    pub fn with<I, S>(mut self, tag: CallTag, responses: I) -> Script
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.default.entry(tag).or_default().extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn with_question<I, S>(mut self, question_id: &str, tag: CallTag, responses: I) -> Script
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.questions
            .entry(question_id.to_string())
            .or_default()
            .entry(tag)
            .or_default()
            .extend(responses.into_iter().map(Into::into));
        self
    }

    pub fn load(path: &Path) -> io::Result<Script> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Rebuilds a script from a replay log; every recorded response is keyed
    /// by its exact scope and occurrence.
    pub fn from_replay_log(path: &Path) -> io::Result<Script> {
        let file = std::fs::File::open(path)?;
        let mut slots: BTreeMap<String, BTreeMap<CallTag, BTreeMap<usize, String>>> = BTreeMap::new();
        let mut model = None;
        for (i, line) in io::BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: ReplayRecord = serde_json::from_str(&line).map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("replay line {}: {e}", i + 1))
            })?;
            model.get_or_insert(rec.model.clone());
            if let Some(text) = rec.response {
                slots.entry(rec.scope.key()).or_default().entry(rec.tag).or_default().insert(rec.occurrence, text);
            }
        }
        let mut script = Script { model, ..Default::default() };
        for (scope, tags) in slots {
            let entry = script.scopes.entry(scope).or_default();
            for (tag, by_occ) in tags {
                // stop at the first gap so occurrence indices stay aligned
                let mut seq = Vec::new();
                for (expected, (occ, text)) in by_occ.into_iter().enumerate() {
                    if occ != expected {
                        break;
                    }
                    seq.push(text);
                }
                entry.insert(tag, seq);
            }
        }
        Ok(script)
    }

    fn lookup(&self, req: &LlmRequest, occurrence: usize) -> Option<&str> {
        let levels = [
            self.scopes.get(&req.scope.key()),
            self.questions.get(&req.scope.question_id),
            Some(&self.default),
        ];
        let list = levels.into_iter().flatten().find_map(|m| m.get(&req.tag))?;
        list.get(occurrence).map(String::as_str)
    }
}

/// Deterministic backend replaying a [`Script`]; occurrence counters are kept
/// per (scope, tag), so concurrent scopes never interfere.
#[derive(Debug)]
pub struct ScriptedBackend {
    script: Script,
    model: String,
    counters: Mutex<HashMap<(String, CallTag), usize>>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> ScriptedBackend {
        let model = script.model.clone().unwrap_or_else(|| "scripted".into());
        ScriptedBackend { script, model, counters: Mutex::new(HashMap::new()) }
    }
}

impl LlmBackend for ScriptedBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let occurrence = {
            let mut counters = self.counters.lock().expect("counter lock poisoned");
            let slot = counters.entry((req.scope.key(), req.tag)).or_insert(0);
            let occ = *slot;
            *slot += 1;
            occ
        };
        match self.script.lookup(req, occurrence) {
            Some(text) => Ok(LlmResponse::text(text)),
            None => Err(LlmError::ScriptExhausted { scope: req.scope.key(), tag: req.tag, occurrence }),
        }
    }

    fn model_id(&self) -> &str {
        &self.model
    }
}
