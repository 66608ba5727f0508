use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{CallTag, LlmBackend, LlmError, LlmRequest, LlmResponse, Message, Scope};

/// One line of the replay log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub scope: Scope,
    pub tag: CallTag,
    pub occurrence: usize,
    pub model: String,
    pub messages: Vec<Message>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Mirrors every request/response pair of an inner backend to a JSONL file.
pub struct RecordingBackend {
    inner: Arc<dyn LlmBackend>,
    state: Mutex<(BufWriter<File>, HashMap<(String, CallTag), usize>)>,
}

impl RecordingBackend {
    /// Appends to `path`, creating it if needed.
    pub fn new(inner: Arc<dyn LlmBackend>, path: &Path) -> io::Result<RecordingBackend> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(RecordingBackend { inner, state: Mutex::new((BufWriter::new(file), HashMap::new())) })
    }
}

impl LlmBackend for RecordingBackend {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError> {
        let result = self.inner.complete(req);
        let mut state = self.state.lock().expect("replay log poisoned");
        let (writer, counters) = &mut *state;
        let slot = counters.entry((req.scope.key(), req.tag)).or_insert(0);
        let record = ReplayRecord {
            scope: req.scope.clone(),
            tag: req.tag,
            occurrence: *slot,
            model: self.inner.model_id().to_string(),
            messages: req.messages.clone(),
            response: result.as_ref().ok().map(|r| r.text.clone()),
            error: result.as_ref().err().map(ToString::to_string),
        };
        *slot += 1;
        let write = serde_json::to_writer(&mut *writer, &record)
            .map_err(io::Error::from)
            .and_then(|_| writer.write_all(b"\n"))
            .and_then(|_| writer.flush());
        if let Err(e) = write {
            log::warn!("replay log write failed: {e}");
        }
        result
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{CallLedger, LlmClient, Script, ScriptedBackend};

    #[test]
    fn recorded_log_seeds_an_equivalent_script() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("replay.jsonl");
        let script = Script::default()
            .with(CallTag::Text2sql, ["a", "b"])
            .with(CallTag::Decomposer, ["d"]);
        let rec = Arc::new(RecordingBackend::new(Arc::new(ScriptedBackend::new(script)), &log).unwrap());
        let ledger = Arc::new(CallLedger::default());
        let c = LlmClient::new(rec, ledger.clone(), Scope::new("q", "t2sc-multi", 2));
        let mut first = Vec::new();
        for tag in [CallTag::Decomposer, CallTag::Text2sql, CallTag::Text2sql, CallTag::Text2sql] {
            first.push(c.complete(tag, "prompt".into()).map(|r| r.text).ok());
        }
        assert_eq!(first, vec![Some("d".into()), Some("a".into()), Some("b".into()), None]);

        let replayed = Arc::new(ScriptedBackend::new(Script::from_replay_log(&log).unwrap()));
        assert_eq!(replayed.model_id(), "scripted");
        let c2 = LlmClient::new(replayed, Arc::new(CallLedger::default()), Scope::new("q", "t2sc-multi", 2));
        let mut second = Vec::new();
        for tag in [CallTag::Decomposer, CallTag::Text2sql, CallTag::Text2sql, CallTag::Text2sql] {
            second.push(c2.complete(tag, "prompt".into()).map(|r| r.text).ok());
        }
        assert_eq!(first, second);

        let lines = std::fs::read_to_string(&log).unwrap();
        assert_eq!(lines.lines().count(), 4);
        let last: ReplayRecord = serde_json::from_str(lines.lines().last().unwrap()).unwrap();
        assert_eq!(last.occurrence, 2);
        assert!(last.error.unwrap().contains("script exhausted"));
    }
}
