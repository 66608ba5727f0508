use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{Sandbox, SandboxJob, SandboxResult};

/// A canned result document returned for code containing `match`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StubEntry {
    /// Substring of the submitted code; empty matches everything.
    #[serde(rename = "match")]
    pub pattern: String,
    pub result: SandboxResult,
}

/// Replays canned result documents instead of executing anything. The first
/// entry whose pattern occurs in the code wins; no match is a harness error.
#[derive(Debug, Default)]
pub struct StubSandbox {
    entries: Vec<StubEntry>,
    runs: AtomicUsize,
}

impl StubSandbox {
    pub fn new(entries: Vec<StubEntry>) -> StubSandbox {
        StubSandbox { entries, runs: AtomicUsize::new(0) }
    }

    /// Reads a JSON array of `{"match": ..., "result": {...}}` entries.
    pub fn load(path: &Path) -> std::io::Result<StubSandbox> {
        let text = std::fs::read_to_string(path)?;
        let entries = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(StubSandbox::new(entries))
    }

    /// Jobs submitted so far.
    pub fn runs(&self) -> usize {
        self.runs.load(Ordering::SeqCst)
    }

    /// The canned result for `code`, as a runner would have produced it.
    pub fn lookup(&self, code: &str) -> SandboxResult {
        self.entries
            .iter()
            .find(|e| code.contains(&e.pattern))
            .map(|e| e.result.clone())
            .unwrap_or_else(|| SandboxResult::harness_error("stub sandbox has no entry matching this code"))
    }
}

impl Sandbox for StubSandbox {
    fn run(&self, job: &SandboxJob<'_>) -> SandboxResult {
        self.runs.fetch_add(1, Ordering::SeqCst);
        let mut r = self.lookup(job.code);
        // go through the same size cap a real result document would
        if let Ok(text) = serde_json::to_string(&r) {
            if let Ok(capped) = SandboxResult::from_document(&text, job.limits.max_result_bytes) {
                r = capped;
            }
        }
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::code::{JobInputs, SandboxLimits, SandboxOutcome};

    #[test]
    fn first_matching_entry_wins() {
        let json = r#"[
            {"match": "boom", "result": {"outcome": "exec_error", "error": {"type": "ZeroDivisionError", "message": "division by zero"}}},
            {"match": "", "result": {"outcome": "ok", "result_text": "[[\"done\"]]"}}
        ]"#;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("stub.json");
        std::fs::write(&path, json).unwrap();
        let stub = StubSandbox::load(&path).unwrap();
        let job = |code| SandboxJob { inputs: JobInputs::Multi(&[]), code, limits: SandboxLimits::default() };
        assert!(matches!(stub.run(&job("x = 1/0  # boom")).outcome, SandboxOutcome::ExecError { .. }));
        assert!(matches!(stub.run(&job("return")).outcome, SandboxOutcome::Ok { .. }));
        assert_eq!(stub.runs(), 2);
        assert!(matches!(StubSandbox::default().lookup("x").outcome, SandboxOutcome::ExecError { .. }));
    }
}
