//! Client side of generated-code execution: job and result documents, the
//! sandbox boundary, and the code repair loop.

mod process;
mod repair;
mod stub;

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::table::ResultTable;

pub use process::ProcessSandbox;
pub use repair::{run_code_with_repair, CodeAttempt, CodeExecution, CodeMode, CodeStepInput};
pub use stub::{StubEntry, StubSandbox};

/// Name of the function generated code must define.
pub const ENTRY_NAME: &str = "compute_result";
/// Traceback lines kept when an error is fed back for repair.
pub const TRACEBACK_LINES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxLimits {
    #[serde(with = "millis")]
    pub wall_timeout: Duration,
    pub memory_cap_bytes: u64,
    pub no_network: bool,
    /// Longest result text accepted back from the sandbox.
    pub max_result_bytes: usize,
}

impl Default for SandboxLimits {
    fn default() -> Self {
        SandboxLimits {
            wall_timeout: Duration::from_secs(300),
            memory_cap_bytes: 4 << 30,
            no_network: true,
            max_result_bytes: 1 << 20,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// What the generated function receives.
#[derive(Clone, Debug)]
pub enum JobInputs<'a> {
    /// Fetched tables, in SQL-step order.
    Multi(&'a [ResultTable]),
    /// Path of the database the function opens itself.
    Single(&'a Path),
}

#[derive(Clone, Debug)]
pub struct SandboxJob<'a> {
    pub inputs: JobInputs<'a>,
    pub code: &'a str,
    pub limits: SandboxLimits,
}

/// Limits as written into the job document.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobLimits {
    pub wall_timeout_ms: u64,
    pub memory_cap_bytes: u64,
    pub no_network: bool,
}

/// The `job.json` handed to the runner. Relative paths resolve against the
/// scratch directory, which is also the runner's working directory.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobDocument {
    pub mode: String,
    pub code: String,
    pub entry: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub db_path: Option<String>,
    pub limits: JobLimits,
    /// Where the runner writes its result document.
    pub result_path: String,
}

pub const JOB_FILE: &str = "job.json";
pub const RESULT_FILE: &str = "result.json";

/// Writes the job document and its inputs into `scratch`; returns the job
/// file path.
pub fn write_job(job: &SandboxJob<'_>, scratch: &Path) -> std::io::Result<PathBuf> {
    let limits = JobLimits {
        wall_timeout_ms: job.limits.wall_timeout.as_millis() as u64,
        memory_cap_bytes: job.limits.memory_cap_bytes,
        no_network: job.limits.no_network,
    };
    let mut doc = JobDocument {
        mode: String::new(),
        code: job.code.to_string(),
        entry: ENTRY_NAME.to_string(),
        inputs: Vec::new(),
        db_path: None,
        limits,
        result_path: RESULT_FILE.to_string(),
    };
    match &job.inputs {
        JobInputs::Multi(tables) => {
            doc.mode = "multi".into();
            for (i, t) in tables.iter().enumerate() {
                let name = format!("input_{i}.json");
                t.write_payload(&scratch.join(&name))?;
                doc.inputs.push(name);
            }
        }
        JobInputs::Single(db) => {
            doc.mode = "single".into();
            doc.db_path = Some(link_database(db, scratch)?);
        }
    }
    let path = scratch.join(JOB_FILE);
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    Ok(path)
}

/// Makes the database reachable from inside the scratch directory.
fn link_database(db: &Path, scratch: &Path) -> std::io::Result<String> {
    let name = "database.sqlite";
    let target = scratch.join(name);
    let source = db.canonicalize()?;
    #[cfg(unix)]
    let linked = std::os::unix::fs::symlink(&source, &target);
    #[cfg(not(unix))]
    let linked: std::io::Result<()> = Err(std::io::Error::other("no symlinks"));
    if linked.is_err() {
        std::fs::copy(&source, &target)?;
    }
    Ok(name.to_string())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecErrorInfo {
    #[serde(rename = "type")]
    pub error_type: String,
    pub message: String,
    #[serde(default, deserialize_with = "traceback_text")]
    pub traceback: String,
}

/// Accepts a traceback as one string or as a list of lines.
fn traceback_text<'de, D: serde::Deserializer<'de>>(d: D) -> Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Tb {
        Text(String),
        Lines(Vec<String>),
    }
    Ok(match Option::<Tb>::deserialize(d)? {
        Some(Tb::Text(s)) => s,
        Some(Tb::Lines(l)) => l.join("\n"),
        None => String::new(),
    })
}

impl ExecErrorInfo {
    pub fn harness(message: impl Into<String>) -> ExecErrorInfo {
        ExecErrorInfo { error_type: "harness".into(), message: message.into(), traceback: String::new() }
    }

    /// Type, message and the last [`TRACEBACK_LINES`] traceback lines.
    pub fn repair_text(&self) -> String {
        let mut out = format!("{}: {}", self.error_type, self.message);
        let lines: Vec<&str> = self.traceback.lines().collect();
        if !lines.is_empty() {
            out.push_str("\nTraceback (last lines):\n");
            out.push_str(&lines[lines.len().saturating_sub(TRACEBACK_LINES)..].join("\n"));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum SandboxOutcome {
    Ok {
        result_text: String,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        truncated: bool,
    },
    ExecError { error: ExecErrorInfo },
    Timeout,
    Oom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandboxResult {
    #[serde(flatten)]
    pub outcome: SandboxOutcome,
    #[serde(default)]
    pub duration_ms: u64,
}

impl SandboxResult {
    pub fn harness_error(message: impl Into<String>) -> SandboxResult {
        SandboxResult { outcome: SandboxOutcome::ExecError { error: ExecErrorInfo::harness(message) }, duration_ms: 0 }
    }

    /// Parses a result document, applying the result-size cap.
    pub fn from_document(text: &str, max_result_bytes: usize) -> Result<SandboxResult, String> {
        let mut r: SandboxResult = serde_json::from_str(text).map_err(|e| format!("unreadable result document: {e}"))?;
        if let SandboxOutcome::Ok { result_text, truncated } = &mut r.outcome {
            if result_text.len() > max_result_bytes {
                let mut cut = max_result_bytes;
                while !result_text.is_char_boundary(cut) {
                    cut -= 1;
                }
                result_text.truncate(cut);
                *truncated = true;
            }
        }
        Ok(r)
    }
}

/// Executes one job in isolation. Implementations must be safe to call from
/// several worker threads at once.
pub trait Sandbox: Send + Sync {
    fn run(&self, job: &SandboxJob<'_>) -> SandboxResult;
}
