use std::fs::File;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use super::{write_job, Sandbox, SandboxJob, SandboxOutcome, SandboxResult, RESULT_FILE};

/// Environment variables passed through to the runner; everything else is dropped.
const ENV_ALLOWLIST: &[&str] = &["PATH", "LANG", "LC_ALL", "PYTHONPATH", "PYTHONHOME", "VIRTUAL_ENV", "SYSTEMROOT"];

/// Runs `<command...> <job.json>` in a fresh scratch directory per job.
#[derive(Clone, Debug)]
pub struct ProcessSandbox {
    command: Vec<String>,
    /// Extra time past the wall timeout before the process is killed.
    pub grace: Duration,
}

impl ProcessSandbox {
    /// `command` is split on whitespace, e.g. `"python3 -m sandbox_runner"`.
    pub fn new(command: &str) -> Result<ProcessSandbox, String> {
        let command: Vec<String> = command.split_whitespace().map(String::from).collect();
        if command.is_empty() {
            return Err("empty sandbox command".into());
        }
        Ok(ProcessSandbox { command, grace: Duration::from_secs(3) })
    }

    fn execute(&self, job: &SandboxJob<'_>, scratch: &Path) -> SandboxResult {
        let job_path = match write_job(job, scratch) {
            Ok(p) => p,
            Err(e) => return SandboxResult::harness_error(format!("cannot write job: {e}")),
        };
        let (stdout, stderr) = match (File::create(scratch.join("stdout.txt")), File::create(scratch.join("stderr.txt"))) {
            (Ok(o), Ok(e)) => (o, e),
            _ => return SandboxResult::harness_error("cannot create output files"),
        };
        let mut cmd = Command::new(&self.command[0]);
        cmd.args(&self.command[1..])
            .arg(&job_path)
            .current_dir(scratch)
            .env_clear()
            .envs(ENV_ALLOWLIST.iter().filter_map(|k| std::env::var_os(k).map(|v| (*k, v))))
            .env("HOME", scratch)
            .env("TMPDIR", scratch)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr);
        let started = Instant::now();
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return SandboxResult::harness_error(format!("cannot start runner '{}': {e}", self.command[0])),
        };
        let deadline = started + job.limits.wall_timeout + self.grace;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break status,
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return SandboxResult {
                        outcome: SandboxOutcome::Timeout,
                        duration_ms: started.elapsed().as_millis() as u64,
                    };
                }
                Ok(None) => std::thread::sleep(Duration::from_millis(10)),
                Err(e) => return SandboxResult::harness_error(format!("waiting for runner: {e}")),
            }
        };
        let elapsed = started.elapsed().as_millis() as u64;
        if !status.success() {
            let stderr = std::fs::read_to_string(scratch.join("stderr.txt")).unwrap_or_default();
            let tail: Vec<&str> = stderr.lines().rev().take(super::TRACEBACK_LINES).collect();
            let tail: Vec<&str> = tail.into_iter().rev().collect();
            let mut r = SandboxResult::harness_error(format!("runner exited with {status}: {}", tail.join("\n")));
            r.duration_ms = elapsed;
            return r;
        }
        let text = match std::fs::read_to_string(scratch.join(RESULT_FILE)) {
            Ok(t) => t,
            Err(e) => return SandboxResult::harness_error(format!("runner wrote no result document: {e}")),
        };
        match SandboxResult::from_document(&text, job.limits.max_result_bytes) {
            Ok(mut r) => {
                if r.duration_ms == 0 {
                    r.duration_ms = elapsed;
                }
                r
            }
            Err(e) => SandboxResult::harness_error(e),
        }
    }
}

impl Sandbox for ProcessSandbox {
    fn run(&self, job: &SandboxJob<'_>) -> SandboxResult {
        match tempfile::Builder::new().prefix("sandbox-job-").tempdir() {
            Ok(dir) => self.execute(job, dir.path()),
            Err(e) => SandboxResult::harness_error(format!("cannot create scratch directory: {e}")),
        }
    }
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;
    use crate::code::{ExecErrorInfo, JobInputs, SandboxLimits};

    fn script(dir: &Path, body: &str) -> String {
        let path = dir.join("runner.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{body}\n")).unwrap();
        format!("sh {}", path.display())
    }

    fn job(limits: SandboxLimits) -> SandboxJob<'static> {
        SandboxJob { inputs: JobInputs::Multi(&[]), code: "def compute_result(dfs): return []", limits }
    }

    #[test]
    fn reads_result_document() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = script(dir.path(), r#"printf '{"outcome":"ok","result_text":"[[\\"ok\\",\\"1\\"]]","duration_ms":3}' > result.json"#);
        let r = ProcessSandbox::new(&cmd).unwrap().run(&job(SandboxLimits::default()));
        assert_eq!(r.outcome, SandboxOutcome::Ok { result_text: r#"[["ok","1"]]"#.into(), truncated: false });
    }

    #[test]
    fn nonzero_exit_is_a_harness_error() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = script(dir.path(), "echo broken job >&2; exit 3");
        match ProcessSandbox::new(&cmd).unwrap().run(&job(SandboxLimits::default())).outcome {
            SandboxOutcome::ExecError { error: ExecErrorInfo { error_type, message, .. } } => {
                assert_eq!(error_type, "harness");
                assert!(message.contains("broken job"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hung_runner_is_killed() {
        let dir = tempfile::tempdir().unwrap();
        let cmd = script(dir.path(), "exec sleep 30");
        let mut sandbox = ProcessSandbox::new(&cmd).unwrap();
        sandbox.grace = Duration::from_millis(200);
        let limits = SandboxLimits { wall_timeout: Duration::from_millis(300), ..Default::default() };
        let started = Instant::now();
        assert_eq!(sandbox.run(&job(limits)).outcome, SandboxOutcome::Timeout);
        assert!(started.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn environment_is_scrubbed_and_cwd_is_scratch() {
        std::env::set_var("SQLCODE_TEST_SECRET", "leak");
        let dir = tempfile::tempdir().unwrap();
        let cmd = script(
            dir.path(),
            r#"printf '{"outcome":"ok","result_text":"%s|%s"}' "${SQLCODE_TEST_SECRET:-none}" "$(test -f job.json && echo here)" > result.json"#,
        );
        let r = ProcessSandbox::new(&cmd).unwrap().run(&job(SandboxLimits::default()));
        assert_eq!(r.outcome, SandboxOutcome::Ok { result_text: "none|here".into(), truncated: false });
    }

    #[test]
    fn missing_program() {
        let r = ProcessSandbox::new("/nonexistent/runner").unwrap().run(&job(SandboxLimits::default()));
        assert!(matches!(r.outcome, SandboxOutcome::ExecError { .. }));
        assert!(ProcessSandbox::new("  ").is_err());
    }
}
