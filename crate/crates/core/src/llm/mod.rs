//! Completion backends and per-run call accounting.
//!
//! Pipelines never talk to a backend directly: they go through an
//! [`LlmClient`], which is bound to one (question, method, run) scope and
//! records exactly one ledger entry per completion request.

mod http;
mod ledger;
mod replay;
mod scripted;

use std::fmt;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpConfig};
pub use ledger::CallLedger;
pub use replay::{RecordingBackend, ReplayRecord};
pub use scripted::{Script, ScriptedBackend};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// Which pipeline step issued a request.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallTag {
    Text2sql,
    Decomposer,
    Text2python,
    SingleShot,
    Knowledge,
    RepairSql,
    RepairCode,
}

impl CallTag {
    pub const ALL: [CallTag; 7] = [
        CallTag::Text2sql,
        CallTag::Decomposer,
        CallTag::Text2python,
        CallTag::SingleShot,
        CallTag::Knowledge,
        CallTag::RepairSql,
        CallTag::RepairCode,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CallTag::Text2sql => "text2sql",
            CallTag::Decomposer => "decomposer",
            CallTag::Text2python => "text2python",
            CallTag::SingleShot => "single_shot",
            CallTag::Knowledge => "knowledge",
            CallTag::RepairSql => "repair_sql",
            CallTag::RepairCode => "repair_code",
        }
    }

    pub fn parse(s: &str) -> Option<CallTag> {
        CallTag::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for CallTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The (question, method, run) a request belongs to.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
pub struct Scope {
    pub question_id: String,
    pub method: String,
    pub run: u32,
}

impl Scope {
    pub fn new(question_id: impl Into<String>, method: impl Into<String>, run: u32) -> Scope {
        Scope { question_id: question_id.into(), method: method.into(), run }
    }

    /// Stable textual key, `question#method#run`.
    pub fn key(&self) -> String {
        format!("{}#{}#{}", self.question_id, self.method, self.run)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LlmRequest {
    pub model_id: String,
    pub messages: Vec<Message>,
    /// `None` leaves the provider default in place.
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    pub tag: CallTag,
    pub scope: Scope,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
    pub total_tokens: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LlmResponse {
    /// May be empty; callers treat that like any other unusable reply.
    pub text: String,
    pub usage: Option<Usage>,
    pub latency: Duration,
    /// Transport-level retries spent before this response arrived.
    pub transport_retries: u32,
}

impl LlmResponse {
    pub fn text(text: impl Into<String>) -> LlmResponse {
        LlmResponse { text: text.into(), usage: None, latency: Duration::ZERO, transport_retries: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("transport failure after {retries} retries: {message}")]
    Transport { message: String, retries: u32 },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("provider returned HTTP {status}: {body}")]
    Api { status: u16, body: String },
    #[error("malformed provider response: {0}")]
    Malformed(String),
    #[error("script exhausted: no response for {tag} #{occurrence} in scope {scope}")]
    ScriptExhausted { scope: String, tag: CallTag, occurrence: usize },
}

impl LlmError {
    fn transport_retries(&self) -> u32 {
        match self {
            LlmError::Transport { retries, .. } => *retries,
            _ => 0,
        }
    }
}

pub trait LlmBackend: Send + Sync {
    fn complete(&self, req: &LlmRequest) -> Result<LlmResponse, LlmError>;

    /// Model identifier recorded in traces.
    fn model_id(&self) -> &str;
}

/// Generation settings shared by every request of a run.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

/// A backend handle bound to one scope and ledger.
#[derive(Clone)]
pub struct LlmClient {
    backend: Arc<dyn LlmBackend>,
    ledger: Arc<CallLedger>,
    scope: Scope,
    generation: GenerationConfig,
}

impl LlmClient {
    pub fn new(backend: Arc<dyn LlmBackend>, ledger: Arc<CallLedger>, scope: Scope) -> LlmClient {
        LlmClient { backend, ledger, scope, generation: GenerationConfig::default() }
    }

    pub fn with_generation(mut self, generation: GenerationConfig) -> LlmClient {
        self.generation = generation;
        self
    }

    pub fn scope(&self) -> &Scope {
        &self.scope
    }

    pub fn ledger(&self) -> &CallLedger {
        &self.ledger
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    /// Calls recorded so far for this client's scope.
    pub fn calls(&self) -> u64 {
        self.ledger.total(&self.scope)
    }

    /// Sends `prompt` as a single user message. Counts as one call whatever the outcome.
    pub fn complete(&self, tag: CallTag, prompt: String) -> Result<LlmResponse, LlmError> {
        let req = LlmRequest {
            model_id: self.backend.model_id().to_string(),
            messages: vec![Message { role: Role::User, content: prompt }],
            temperature: self.generation.temperature,
            max_tokens: self.generation.max_tokens,
            tag,
            scope: self.scope.clone(),
        };
        self.ledger.record(&self.scope, tag);
        let result = self.backend.complete(&req);
        let retries = match &result {
            Ok(r) => r.transport_retries,
            Err(e) => e.transport_retries(),
        };
        if retries > 0 {
            self.ledger.record_transport_retries(&self.scope, retries);
        }
        result
    }
}
