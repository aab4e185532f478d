use async_trait::async_trait;
use serde_json::{Map, Value};
use thiserror::Error;

use super::env::{EnvData, EnvState};
use crate::trajectory::StopTokenSet;

/// Per-request metadata sent alongside an action (turn index, schema hints,
/// turn budget, ...).
pub type Extra = Map<String, Value>;

/// Result of one tool execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToolOutput {
    pub observation: String,
    pub valid: bool,
    pub done: bool,
}

impl ToolOutput {
    pub fn ok(observation: impl Into<String>) -> Self {
        Self { observation: observation.into(), valid: true, done: false }
    }

    pub fn invalid(observation: impl Into<String>) -> Self {
        Self { observation: observation.into(), valid: false, done: false }
    }

    pub fn done(observation: impl Into<String>) -> Self {
        Self { observation: observation.into(), valid: true, done: true }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ToolError {
    #[error("tool timed out after {0} ms")]
    Timeout(u64),
    #[error("tool crashed: {0}")]
    Crash(String),
    #[error("environment setup failed: {0}")]
    Env(String),
}

/// A tool that can be registered with the server.
///
/// `parse_action` decides whether an action addresses this tool and extracts
/// the payload; `conduct_action` runs it against the trajectory's state.
/// Implementations must tolerate concurrent calls on different `EnvState`s.
/// A single state is never executed concurrently.
#[async_trait]
pub trait ToolPlugin: Send + Sync {
    fn tool_id(&self) -> &str;

    fn stop_tokens(&self) -> &StopTokenSet;

    fn parse_action(&self, action_text: &str) -> Option<String>;

    /// Fresh state for a trajectory seen for the first time.
    fn init_env(&self, _trajectory_id: &str) -> Result<EnvData, ToolError> {
        Ok(EnvData::new())
    }

    async fn conduct_action(
        &self,
        env: &mut EnvState,
        tool_input: &str,
        extra: &Extra,
    ) -> Result<ToolOutput, ToolError>;

    /// Releases anything the state owns (files, handles).
    fn teardown_env(&self, _env: &EnvState) {}
}
