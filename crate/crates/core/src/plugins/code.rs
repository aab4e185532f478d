//! Code interpreter backed by an external sandbox worker process.
//!
//! Each call starts a fresh worker, writes one [`SandboxJob`] JSON line to
//! its stdin and reads one [`SandboxResult`] JSON line from its stdout.
//! Snippets that ran cleanly are kept in the trajectory state and replayed
//! ahead of the next snippet; only output produced after a separator line
//! is reported, so replayed output is not repeated.

use std::path::PathBuf;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::process::Command;

use super::process::{run_capped, ProcError};
use super::shell::{make_workdir, remove_workdir, WORKDIR_KEY};
use crate::server::{EnvData, EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::{between_last, cap_with_marker};
use crate::trajectory::StopTokenSet;

pub const HISTORY_KEY: &str = "history";
const CELL_SEPARATOR: &str = "__toolrl_cell_boundary__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandboxJob {
    pub code: String,
    pub timeout_s: f64,
    pub stdout_cap_bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SandboxResult {
    pub stdout: String,
    pub stderr: String,
    pub exit_status: i32,
    pub timed_out: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
#[serde(untagged)]
enum WorkerReply {
    Result(SandboxResult),
    ProtocolError { error: String },
}

#[derive(Debug, Clone)]
pub struct CodeConfig {
    /// Program and arguments of the sandbox worker.
    pub worker_command: Vec<String>,
    pub scratch_dir: PathBuf,
    pub timeout: Duration,
    pub output_cap_bytes: usize,
}

/// Extracts the snippet from a fenced ```` ```python ```` block followed by
/// ```` ```output ````, or from `<python>...</python>`.
pub fn parse_code(action_text: &str) -> Option<String> {
    if let Some(code) = between_last(action_text, "<python>", "</python>") {
        return Some(code.trim_matches('\n').to_owned());
    }
    let body = action_text.strip_suffix("```output")?.trim_end().strip_suffix("```")?;
    let open = body.rfind("```python").map(|i| (i, "```python")).or_else(|| body.rfind("```py").map(|i| (i, "```py")))?;
    let code = &body[open.0 + open.1.len()..];
    Some(code.trim_matches('\n').to_owned())
}

/// Fences captured output the way the interpreter's stop convention expects.
pub fn format_output(text: &str) -> String {
    format!("\n```output\n{text}\n```")
}

fn with_history(history: &[String], code: &str) -> String {
    let mut src = String::new();
    for snippet in history {
        src.push_str(snippet);
        src.push('\n');
    }
    src.push_str(&format!("import sys as _sys\nprint({CELL_SEPARATOR:?})\nprint({CELL_SEPARATOR:?}, file=_sys.stderr)\n"));
    src.push_str(code);
    src.push('\n');
    src
}

fn after_separator(s: &str) -> &str {
    match s.rfind(CELL_SEPARATOR) {
        Some(i) => s[i + CELL_SEPARATOR.len()..].strip_prefix('\n').unwrap_or(&s[i + CELL_SEPARATOR.len()..]),
        None => s,
    }
}

/// Sends one job to a fresh worker and parses its reply.
pub async fn run_job(cfg: &CodeConfig, workdir: &std::path::Path, job: &SandboxJob) -> Result<SandboxResult, ToolError> {
    let (prog, args) = cfg.worker_command.split_first().ok_or_else(|| ToolError::Crash("empty worker command".into()))?;
    let mut cmd = Command::new(prog);
    cmd.args(args).current_dir(workdir);
    let mut line = serde_json::to_vec(job).map_err(|e| ToolError::Crash(e.to_string()))?;
    line.push(b'\n');
    // the worker enforces the job timeout itself; allow it a second to report
    let hard = cfg.timeout + Duration::from_secs(1);
    let out = run_capped(cmd, Some(line), hard, job.stdout_cap_bytes * 4 + 4096).await.map_err(|e| match e {
        ProcError::Timeout(_) => ToolError::Timeout(cfg.timeout.as_millis() as u64),
        ProcError::Io(e) => ToolError::Crash(e.to_string()),
    })?;
    let text = String::from_utf8_lossy(&out.stdout);
    let reply = text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("");
    match serde_json::from_str::<WorkerReply>(reply) {
        Ok(WorkerReply::Result(r)) => Ok(r),
        Ok(WorkerReply::ProtocolError { error }) => Err(ToolError::Crash(format!("worker protocol error: {error}"))),
        Err(_) => Err(ToolError::Crash(format!(
            "worker exited with {} and no result line: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))),
    }
}

pub struct CodePlugin {
    cfg: CodeConfig,
    stops: StopTokenSet,
}

impl CodePlugin {
    pub fn new(cfg: CodeConfig) -> Self {
        Self { cfg, stops: StopTokenSet::new("code_interpreter", ["```output", "</python>"]).expect("non-empty") }
    }
}

#[async_trait]
impl ToolPlugin for CodePlugin {
    fn tool_id(&self) -> &str {
        "code_interpreter"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        parse_code(action_text)
    }

    fn init_env(&self, _trajectory_id: &str) -> Result<EnvData, ToolError> {
        let mut data = make_workdir(&self.cfg.scratch_dir, "py-")?;
        data.insert(HISTORY_KEY.into(), Value::Array(vec![]));
        Ok(data)
    }

    async fn conduct_action(&self, env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        let dir = PathBuf::from(env.get_str(WORKDIR_KEY).ok_or_else(|| ToolError::Env("no working directory".into()))?);
        let history: Vec<String> = env
            .data
            .get(HISTORY_KEY)
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
            .unwrap_or_default();
        if input.trim().is_empty() {
            return Ok(ToolOutput::ok(format_output("")));
        }
        let job = SandboxJob {
            code: with_history(&history, input),
            timeout_s: self.cfg.timeout.as_secs_f64(),
            stdout_cap_bytes: self.cfg.output_cap_bytes,
        };
        let res = run_job(&self.cfg, &dir, &job).await?;
        if res.timed_out {
            return Err(ToolError::Timeout(self.cfg.timeout.as_millis() as u64));
        }
        let mut text = after_separator(&res.stdout).to_owned();
        text.push_str(after_separator(&res.stderr));
        if res.exit_status == 0 {
            let mut h = history;
            h.push(input.to_owned());
            env.data.insert(HISTORY_KEY.into(), Value::from(h));
        }
        Ok(ToolOutput::ok(format_output(cap_with_marker(text.trim_end_matches('\n'), self.cfg.output_cap_bytes).as_str())))
    }

    fn teardown_env(&self, env: &EnvState) {
        remove_workdir(env);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_and_tagged_snippets() {
        let a = "Let me check.\n```python\nprint(0)\n```\n```output";
        assert_eq!(parse_code(a).as_deref(), Some("print(0)"));
        assert_eq!(parse_code("<python>\n3947 / 7\n</python>").as_deref(), Some("3947 / 7"));
        assert_eq!(parse_code("```output"), None);
        assert_eq!(parse_code("just text"), None);
    }

    #[test]
    fn output_fence() {
        assert_eq!(format_output("0"), "\n```output\n0\n```");
        assert_eq!(format_output(""), "\n```output\n\n```");
    }

    #[test]
    fn replay_output_is_hidden() {
        let stdout = format!("old\n{CELL_SEPARATOR}\nnew\n");
        assert_eq!(after_separator(&stdout), "new\n");
        assert_eq!(after_separator("plain"), "plain");
        let src = with_history(&["x = 1".into()], "print(x)");
        assert!(src.starts_with("x = 1\n") && src.ends_with("print(x)\n"));
    }

    #[test]
    fn worker_replies() {
        let ok: WorkerReply =
            serde_json::from_str(r#"{"stdout":"0\n","stderr":"","exit_status":0,"timed_out":false}"#).unwrap();
        assert!(matches!(ok, WorkerReply::Result(r) if r.stdout == "0\n"));
        let bad: WorkerReply = serde_json::from_str(r#"{"error":"malformed job"}"#).unwrap();
        assert_eq!(bad, WorkerReply::ProtocolError { error: "malformed job".into() });
    }
}
