//! The answering methods, each producing one [`Trace`] per (question, run).

mod methods;
mod oracle;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use rusqlite::Connection;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::answer::{MatchConfig, Prediction};
use crate::code::{CodeExecution, Sandbox, SandboxLimits};
use crate::dataset::Question;
use crate::llm::{CallLedger, CallTag, GenerationConfig, LlmBackend, LlmClient, Scope};
use crate::prompting::{Decomposition, PromptBuilder};
use crate::sql::{SqlExecution, SqlLimits};

pub use oracle::{oracle_combine, OracleError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MethodId {
    Knowledge,
    Text2Sql,
    /// Self-consistency over K Text2SQL samples.
    Sc(u32),
    T2scSingle,
    T2scMulti,
    HybridSingle,
    HybridMulti,
}

impl MethodId {
    /// Directory-safe form, used for trace paths.
    pub fn dir_name(self) -> String {
        match self {
            MethodId::Sc(k) => format!("sc-{k}"),
            other => other.to_string(),
        }
    }

    pub fn uses_sandbox(self) -> bool {
        !matches!(self, MethodId::Knowledge | MethodId::Text2Sql | MethodId::Sc(_))
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MethodId::Knowledge => f.write_str("knowledge"),
            MethodId::Text2Sql => f.write_str("text2sql"),
            MethodId::Sc(k) => write!(f, "sc:{k}"),
            MethodId::T2scSingle => f.write_str("t2sc-single"),
            MethodId::T2scMulti => f.write_str("t2sc-multi"),
            MethodId::HybridSingle => f.write_str("hybrid-single"),
            MethodId::HybridMulti => f.write_str("hybrid-multi"),
        }
    }
}

impl FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> Result<MethodId, String> {
        let s = s.trim().to_ascii_lowercase();
        let k = s.strip_prefix("sc:").or_else(|| s.strip_prefix("sc-"));
        if let Some(k) = k {
            let k: u32 = k.parse().map_err(|_| format!("bad sample count in '{s}'"))?;
            if k < 2 {
                return Err("self-consistency needs at least 2 samples".into());
            }
            return Ok(MethodId::Sc(k));
        }
        match s.as_str() {
            "knowledge" => Ok(MethodId::Knowledge),
            "text2sql" => Ok(MethodId::Text2Sql),
            "t2sc-single" => Ok(MethodId::T2scSingle),
            "t2sc-multi" => Ok(MethodId::T2scMulti),
            "hybrid-single" => Ok(MethodId::HybridSingle),
            "hybrid-multi" => Ok(MethodId::HybridMulti),
            _ => Err(format!(
                "unknown method '{s}'; expected knowledge, text2sql, sc:K, t2sc-single, t2sc-multi, hybrid-single or hybrid-multi"
            )),
        }
    }
}

impl Serialize for MethodId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MethodId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<MethodId, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// Record of the decomposer step, including its repairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecomposerRecord {
    /// One entry per attempt: `None` if it parsed, else the error.
    pub attempts: Vec<Option<String>>,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub wall_ms: u64,
}

/// Everything one method did for one question in one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub question_id: String,
    pub db_id: String,
    pub method: MethodId,
    pub run: u32,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposer: Option<DecomposerRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Decomposition>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sql_executions: Vec<SqlExecution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code_execution: Option<CodeExecution>,
    pub used_python: bool,
    pub prediction: Prediction,
    pub llm_calls: u64,
    #[serde(default)]
    pub calls_by_tag: BTreeMap<CallTag, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub routed_to_t2sc: Option<bool>,
    /// Self-consistency: whether one answer had a strict plurality.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_majority: Option<bool>,
    /// Text2SQL samples behind a vote or a routing decision.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub subruns: Vec<Trace>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<Timings>,
}

impl Trace {
    fn new(q: &Question, method: MethodId, run: u32, model: &str) -> Trace {
        Trace::blank(&q.id, &q.db_id, method, run, model)
    }

    fn blank(question_id: &str, db_id: &str, method: MethodId, run: u32, model: &str) -> Trace {
        Trace {
            question_id: question_id.to_string(),
            db_id: db_id.to_string(),
            method,
            run,
            model: model.to_string(),
            raw_answer: None,
            decomposer: None,
            decomposition: None,
            sql_executions: Vec::new(),
            code_execution: None,
            used_python: false,
            prediction: Prediction::Failure,
            llm_calls: 0,
            calls_by_tag: BTreeMap::new(),
            routed_to_t2sc: None,
            is_majority: None,
            subruns: Vec::new(),
            timings: None,
        }
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("traces always serialize")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineSettings {
    pub sql_limits: SqlLimits,
    pub sandbox_limits: SandboxLimits,
    pub max_repairs: u32,
    /// Used for self-consistency votes and Hybrid agreement.
    pub match_cfg: MatchConfig,
    /// Head/tail rows shown per fetched table.
    pub shape_samples: usize,
    pub generation: GenerationConfig,
    /// Timing fields make trace files differ run to run, so they are opt-in.
    pub record_timings: bool,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        PipelineSettings {
            sql_limits: SqlLimits::default(),
            sandbox_limits: SandboxLimits::default(),
            max_repairs: 3,
            match_cfg: MatchConfig::default(),
            shape_samples: 3,
            generation: GenerationConfig::default(),
            record_timings: false,
        }
    }
}

/// Per-question inputs shared by all methods.
#[derive(Clone, Copy)]
pub struct QuestionContext<'a> {
    pub question: &'a Question,
    /// Rendered schema block of the question's database.
    pub schema: &'a str,
    /// Read-only connection to that database.
    pub conn: &'a Connection,
    pub db_path: &'a Path,
}

/// Long-lived collaborators shared by every pipeline run.
#[derive(Clone)]
pub struct Engine {
    pub prompts: Arc<PromptBuilder>,
    pub backend: Arc<dyn LlmBackend>,
    pub ledger: Arc<CallLedger>,
    pub sandbox: Arc<dyn Sandbox>,
    pub settings: PipelineSettings,
}

impl Engine {
    pub fn new(backend: Arc<dyn LlmBackend>, sandbox: Arc<dyn Sandbox>, settings: PipelineSettings) -> Engine {
        Engine {
            prompts: Arc::new(PromptBuilder::builtin()),
            backend,
            ledger: Arc::new(CallLedger::default()),
            sandbox,
            settings,
        }
    }

    pub fn with_prompts(mut self, prompts: PromptBuilder) -> Engine {
        self.prompts = Arc::new(prompts);
        self
    }

    fn client(&self, q: &Question, method: MethodId, run: u32) -> LlmClient {
        LlmClient::new(self.backend.clone(), self.ledger.clone(), Scope::new(&q.id, method.to_string(), run))
            .with_generation(self.settings.generation.clone())
    }

    /// Runs `method` once. `seed` drives every random choice (vote tie-breaks).
    pub fn run(&self, method: MethodId, ctx: &QuestionContext<'_>, run: u32, seed: u64) -> Trace {
        let started = Instant::now();
        let client = self.client(ctx.question, method, run);
        let mut trace = methods::dispatch(self, &client, method, ctx, run, seed);
        if self.settings.record_timings {
            trace.timings = Some(Timings { wall_ms: started.elapsed().as_millis() as u64 });
        } else {
            clear_timings(&mut trace);
        }
        trace
    }
}

fn clear_timings(t: &mut Trace) {
    t.timings = None;
    if let Some(c) = &mut t.code_execution {
        c.clear_timings();
    }
    t.subruns.iter_mut().for_each(clear_timings);
}

/// Per-(question, run, method) seed, independent of scheduling order.
pub fn derive_seed(master: u64, question_id: &str, run: u32, method: MethodId) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(question_id.as_bytes());
    h.update([0]);
    h.update(run.to_le_bytes());
    h.update(method.to_string().as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}
