use std::path::PathBuf;
use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;
use tokio::process::Command;

use super::process::{run_capped, ProcError};
use crate::server::{EnvData, EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::{between_last, TRUNCATION_MARKER};
use crate::trajectory::StopTokenSet;

pub const WORKDIR_KEY: &str = "workdir";

#[derive(Debug, Clone)]
pub struct ShellConfig {
    pub scratch_dir: PathBuf,
    pub timeout: Duration,
    pub output_cap_bytes: usize,
}

/// Creates a private working directory under `scratch` for one trajectory.
pub(crate) fn make_workdir(scratch: &std::path::Path, prefix: &str) -> Result<EnvData, ToolError> {
    std::fs::create_dir_all(scratch).map_err(|e| ToolError::Env(e.to_string()))?;
    let dir = tempfile::Builder::new()
        .prefix(prefix)
        .tempdir_in(scratch)
        .map_err(|e| ToolError::Env(e.to_string()))?
        .keep();
    Ok(EnvData::from([(WORKDIR_KEY.to_owned(), Value::from(dir.to_string_lossy().into_owned()))]))
}

pub(crate) fn remove_workdir(env: &EnvState) {
    if let Some(p) = env.get_str(WORKDIR_KEY) {
        let _ = std::fs::remove_dir_all(p);
    }
}

/// Runs `command` with `sh` in `workdir`. The observation is combined
/// stdout and stderr, capped, followed by `(exit N)`.
pub async fn shell_execute(workdir: &std::path::Path, command: &str, cfg: &ShellConfig) -> Result<String, ToolError> {
    let mut cmd = Command::new("sh");
    cmd.arg("-c").arg(format!("{{\n{command}\n}} 2>&1")).current_dir(workdir);
    let out = run_capped(cmd, None, cfg.timeout, cfg.output_cap_bytes).await.map_err(|e| match e {
        ProcError::Timeout(t) => ToolError::Timeout(t.as_millis() as u64),
        ProcError::Io(e) => ToolError::Crash(e.to_string()),
    })?;
    let mut text = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.truncated {
        text.push_str(TRUNCATION_MARKER);
    }
    if !text.is_empty() && !text.ends_with('\n') {
        text.push('\n');
    }
    text.push_str(&format!("(exit {})", out.status));
    Ok(text)
}

pub struct ShellPlugin {
    cfg: ShellConfig,
    stops: StopTokenSet,
}

impl ShellPlugin {
    pub fn new(cfg: ShellConfig) -> Self {
        Self { cfg, stops: StopTokenSet::new("shell", ["</bash>"]).expect("non-empty") }
    }
}

#[async_trait]
impl ToolPlugin for ShellPlugin {
    fn tool_id(&self) -> &str {
        "shell"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        between_last(action_text, "<bash>", "</bash>").map(|s| s.trim().to_owned()).filter(|s| !s.is_empty())
    }

    fn init_env(&self, _trajectory_id: &str) -> Result<EnvData, ToolError> {
        make_workdir(&self.cfg.scratch_dir, "sh-")
    }

    async fn conduct_action(&self, env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        let dir = PathBuf::from(env.get_str(WORKDIR_KEY).ok_or_else(|| ToolError::Env("no working directory".into()))?);
        shell_execute(&dir, input, &self.cfg).await.map(ToolOutput::ok)
    }

    fn teardown_env(&self, env: &EnvState) {
        remove_workdir(env);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dir: &std::path::Path) -> ShellConfig {
        ShellConfig { scratch_dir: dir.to_path_buf(), timeout: Duration::from_millis(500), output_cap_bytes: 256 }
    }

    #[tokio::test]
    async fn echo_and_false() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(shell_execute(dir.path(), "echo hi", &cfg(dir.path())).await.unwrap(), "hi\n(exit 0)");
        assert_eq!(shell_execute(dir.path(), "false", &cfg(dir.path())).await.unwrap(), "(exit 1)");
        assert_eq!(shell_execute(dir.path(), "echo oops >&2", &cfg(dir.path())).await.unwrap(), "oops\n(exit 0)");
    }

    #[tokio::test]
    async fn sleep_past_timeout() {
        let dir = tempfile::tempdir().unwrap();
        let err = shell_execute(dir.path(), "sleep 5", &cfg(dir.path())).await.unwrap_err();
        assert_eq!(err, ToolError::Timeout(500));
    }

    #[tokio::test]
    async fn output_is_capped() {
        let dir = tempfile::tempdir().unwrap();
        let out = shell_execute(dir.path(), "yes | head -c 100000", &cfg(dir.path())).await.unwrap();
        assert!(out.len() <= 256 + TRUNCATION_MARKER.len() + "\n(exit 0)".len());
        assert!(out.contains(TRUNCATION_MARKER));
    }

    #[test]
    fn empty_command_is_not_parsed() {
        let p = ShellPlugin::new(cfg(&std::env::temp_dir()));
        assert_eq!(p.parse_action("<bash>  </bash>"), None);
        assert_eq!(p.parse_action("<bash>ls</bash>").as_deref(), Some("ls"));
    }

    #[tokio::test]
    async fn trajectories_get_private_directories() {
        let dir = tempfile::tempdir().unwrap();
        let p = ShellPlugin::new(cfg(dir.path()));
        let mk = |id: &str| EnvState {
            trajectory_id: id.into(),
            tool_id: "shell".into(),
            data: p.init_env(id).unwrap(),
            created_at: 0,
            last_used: 0,
        };
        let (mut a, mut b) = (mk("a"), mk("b"));
        p.conduct_action(&mut a, "echo secret > probe.txt", &Extra::new()).await.unwrap();
        let seen = p.conduct_action(&mut b, "ls", &Extra::new()).await.unwrap();
        assert_eq!(seen.observation, "(exit 0)");
        let own = p.conduct_action(&mut a, "cat probe.txt", &Extra::new()).await.unwrap();
        assert_eq!(own.observation, "secret\n(exit 0)");
        p.teardown_env(&a);
        p.teardown_env(&b);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
