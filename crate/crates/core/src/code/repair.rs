use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{JobInputs, Sandbox, SandboxJob, SandboxLimits, SandboxOutcome, SandboxResult};
use crate::answer::{canonicalize_answer, AnswerSet};
use crate::dataset::Question;
use crate::llm::{CallTag, LlmClient};
use crate::prompting::{extract_fenced, PromptBuilder, PromptExtras, PromptKind, RepairTarget};
use crate::table::ResultTable;

#[derive(Clone, Copy, Debug)]
pub enum CodeMode<'a> {
    /// Analysis over tables already fetched by the SQL steps.
    Multi { tables: &'a [ResultTable], shapes: &'a str, decomposition: &'a str },
    /// One function that queries the database itself.
    Single { db_path: &'a Path },
}

#[derive(Clone, Copy, Debug)]
pub struct CodeStepInput<'a> {
    pub question: &'a Question,
    /// Rendered schema block.
    pub schema: &'a str,
    pub mode: CodeMode<'a>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeAttempt {
    /// Empty when no code could be extracted from the reply.
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sandbox: Option<SandboxResult>,
    /// Why the attempt failed, as fed back for repair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeExecution {
    pub mode: String,
    pub attempts: Vec<CodeAttempt>,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<AnswerSet>,
}

impl CodeExecution {
    /// Attempts that actually reached the sandbox.
    pub fn sandbox_runs(&self) -> usize {
        self.attempts.iter().filter(|a| a.sandbox.is_some()).count()
    }

    pub fn clear_timings(&mut self) {
        for a in &mut self.attempts {
            if let Some(s) = &mut a.sandbox {
                s.duration_ms = 0;
            }
        }
    }
}

const SINGLE_INPUT_NOTE: &str = "compute_result receives db_path, the path of the SQLite database file.";

fn failure_text(result: &SandboxResult, limits: &SandboxLimits) -> Option<String> {
    match &result.outcome {
        SandboxOutcome::Ok { .. } => None,
        SandboxOutcome::ExecError { error } => Some(error.repair_text()),
        SandboxOutcome::Timeout => Some(format!(
            "the function did not finish within {} s and was stopped; make it faster",
            limits.wall_timeout.as_secs_f64()
        )),
        SandboxOutcome::Oom => Some(format!(
            "the function ran out of memory (limit {} MiB); reduce memory use",
            limits.memory_cap_bytes >> 20
        )),
    }
}

/// One generation call, then up to `max_repairs` repair calls; an attempt
/// succeeds only if the sandbox returns a result that parses as an answer.
pub fn run_code_with_repair(
    input: CodeStepInput<'_>,
    prompts: &PromptBuilder,
    client: &LlmClient,
    sandbox: &dyn Sandbox,
    limits: &SandboxLimits,
    max_repairs: u32,
) -> CodeExecution {
    let (first_kind, first_tag, shapes, mode) = match input.mode {
        CodeMode::Multi { shapes, .. } => (PromptKind::Text2Python, CallTag::Text2python, shapes, "multi"),
        CodeMode::Single { .. } => (PromptKind::SingleShot, CallTag::SingleShot, SINGLE_INPUT_NOTE, "single"),
    };
    let decomposition = match input.mode {
        CodeMode::Multi { decomposition, .. } => Some(decomposition),
        CodeMode::Single { .. } => None,
    };
    let mut exec = CodeExecution { mode: mode.into(), attempts: Vec::new(), ok: false, answer: None };
    let mut last_failure: Option<(String, String)> = None;

    for attempt in 0..=max_repairs {
        let (kind, tag) = if attempt == 0 {
            (first_kind, first_tag)
        } else {
            (PromptKind::Repair(RepairTarget::Code), CallTag::RepairCode)
        };
        let extras = PromptExtras {
            shapes: Some(shapes),
            decomposition,
            artifact: last_failure.as_ref().map(|(a, _)| a.as_str()),
            error: last_failure.as_ref().map(|(_, e)| e.as_str()),
            ..Default::default()
        };
        let prompt = prompts
            .render(kind, input.schema, input.question, &extras)
            .expect("code prompts only need extras supplied here");
        let reply = match client.complete(tag, prompt) {
            Ok(r) => r.text,
            Err(e) => {
                exec.attempts.push(CodeAttempt { code: String::new(), sandbox: None, error: Some(e.to_string()) });
                return exec;
            }
        };
        let code = match extract_fenced(&reply, "python") {
            Ok(c) => c,
            Err(e) => {
                let message = e.to_string();
                exec.attempts.push(CodeAttempt { code: String::new(), sandbox: None, error: Some(message.clone()) });
                last_failure = Some((reply.chars().take(4000).collect(), message));
                continue;
            }
        };
        let inputs = match input.mode {
            CodeMode::Multi { tables, .. } => JobInputs::Multi(tables),
            CodeMode::Single { db_path } => JobInputs::Single(db_path),
        };
        let result = sandbox.run(&SandboxJob { inputs, code: &code, limits: *limits });
        let error = match failure_text(&result, limits) {
            Some(e) => Some(e),
            None => {
                let SandboxOutcome::Ok { result_text, truncated } = &result.outcome else { unreachable!() };
                match canonicalize_answer(result_text) {
                    Ok(answer) if !truncated => {
                        exec.answer = Some(answer);
                        None
                    }
                    Ok(_) => Some("the returned result was too large and got cut off; return only the final answer".into()),
                    Err(e) => Some(format!(
                        "the function ran, but its return value is not a list of tuples ({e}); \
                         return only the list of tuples, without labels or extra text"
                    )),
                }
            }
        };
        let done = error.is_none();
        exec.attempts.push(CodeAttempt { code: code.clone(), sandbox: Some(result), error: error.clone() });
        if done {
            exec.ok = true;
            return exec;
        }
        last_failure = Some((code, error.unwrap_or_default()));
    }
    exec
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::code::{StubEntry, StubSandbox};
    use crate::llm::{CallLedger, LlmBackend, Scope, Script, ScriptedBackend};

    fn question() -> Question {
        Question {
            id: "q".into(),
            db_id: "d".into(),
            text: "what?".into(),
            categories: vec![],
            gold: AnswerSet::empty(),
            reference_code: None,
        }
    }

    fn stub() -> StubSandbox {
        let entries: Vec<StubEntry> = serde_json::from_str(
            r#"[
            {"match": "raise", "result": {"outcome": "exec_error", "error": {"type": "ValueError", "message": "bad", "traceback": "tb"}}},
            {"match": "chatty", "result": {"outcome": "ok", "result_text": "The answer is 5"}},
            {"match": "slow", "result": {"outcome": "timeout"}},
            {"match": "", "result": {"outcome": "ok", "result_text": "[('done',)]"}}
        ]"#,
        )
        .unwrap();
        StubSandbox::new(entries)
    }

    fn fenced(body: &str) -> String {
        format!("```python\ndef compute_result(listOfDFs):\n    {body}\n```")
    }

    fn run(script: Script, sandbox: &StubSandbox) -> (CodeExecution, u64) {
        let backend: Arc<dyn LlmBackend> = Arc::new(ScriptedBackend::new(script));
        let ledger = Arc::new(CallLedger::default());
        let client = LlmClient::new(backend, ledger.clone(), Scope::new("q", "t2sc-multi", 0));
        let q = question();
        let input = CodeStepInput {
            question: &q,
            schema: "S",
            mode: CodeMode::Multi { tables: &[], shapes: "listOfDFs[0]: empty", decomposition: "Text2SQL: x" },
        };
        let exec = run_code_with_repair(input, &PromptBuilder::builtin(), &client, sandbox, &SandboxLimits::default(), 3);
        (exec, ledger.grand_total())
    }

    #[test]
    fn clean_run() {
        let sandbox = stub();
        let (exec, calls) = run(Script::default().with(CallTag::Text2python, [fenced("return [('done',)]")]), &sandbox);
        assert!(exec.ok);
        assert_eq!(exec.answer.unwrap().to_literal(), "[('done',)]");
        assert_eq!(calls, 1);
        assert_eq!(sandbox.runs(), 1);
    }

    #[test]
    fn raise_then_fix() {
        let sandbox = stub();
        let script = Script::default()
            .with(CallTag::Text2python, [fenced("raise ValueError('bad')")])
            .with(CallTag::RepairCode, [fenced("return [('done',)]")]);
        let (exec, calls) = run(script, &sandbox);
        assert!(exec.ok);
        assert_eq!(exec.attempts.len(), 2);
        assert_eq!(exec.attempts[0].error.as_deref(), Some("ValueError: bad\nTraceback (last lines):\ntb"));
        assert_eq!(calls, 2);
    }

    #[test]
    fn unparseable_output_and_timeouts_exhaust_budget() {
        let sandbox = stub();
        let script = Script::default()
            .with(CallTag::Text2python, [fenced("chatty")])
            .with(CallTag::RepairCode, [fenced("slow"), "no code here".to_string(), fenced("raise")]);
        let (exec, calls) = run(script, &sandbox);
        assert!(!exec.ok);
        assert!(exec.answer.is_none());
        assert_eq!(exec.attempts.len(), 4);
        assert_eq!(calls, 4);
        assert_eq!(exec.sandbox_runs(), 3);
        assert!(exec.attempts[0].error.as_deref().unwrap().contains("not a list of tuples"));
    }
}
