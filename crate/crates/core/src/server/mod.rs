//! Tool server: plugin registry, per-trajectory environment store, bounded
//! parallel execution and the batch observation endpoint.
//!
//! A batch request carries one action per trajectory. Each action is routed
//! by the stop string it ends with, parsed by the owning plugin, and
//! executed against that trajectory's state. Responses are positionally
//! aligned with requests and per-item failures never fail the batch.

mod client;
mod env;
pub mod http;
mod plugin;
mod pool;
pub mod wire;

pub use client::{ClientError, HttpToolClient, LocalToolClient, ToolClient};
pub use env::{EnvData, EnvState, EnvStore};
pub use plugin::{Extra, ToolError, ToolOutput, ToolPlugin};
pub use pool::{TimedOut, WorkerPool};

use std::panic::AssertUnwindSafe;
use std::sync::Arc;
use std::time::Duration;

use futures::future::join_all;
use futures::FutureExt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::cap_with_marker;
use crate::trajectory::{detect_stop, find_suffix_conflict, StopTokenSet};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ServerError {
    #[error("tool {0} is already registered")]
    DuplicateTool(String),
    #[error("stop token {longer:?} of tool {tool_id} is ambiguous with {shorter:?}")]
    AmbiguousStopToken { tool_id: String, longer: String, shorter: String },
    #[error("no environment for trajectory {trajectory_id} and tool {tool_id}")]
    UnknownEnv { trajectory_id: String, tool_id: String },
}

/// Immutable-after-startup set of plugins.
#[derive(Default, Clone)]
pub struct ToolRegistry {
    plugins: Vec<Arc<dyn ToolPlugin>>,
}

impl std::fmt::Debug for ToolRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ToolRegistry").field("tools", &self.tool_ids()).finish()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_tool(&mut self, plugin: Arc<dyn ToolPlugin>) -> Result<(), ServerError> {
        let id = plugin.tool_id().to_owned();
        if self.get(&id).is_some() {
            return Err(ServerError::DuplicateTool(id));
        }
        let mut sets: Vec<&StopTokenSet> = self.plugins.iter().map(|p| p.stop_tokens()).collect();
        sets.push(plugin.stop_tokens());
        if let Some((longer, shorter)) = find_suffix_conflict(sets) {
            return Err(ServerError::AmbiguousStopToken { tool_id: id, longer, shorter });
        }
        self.plugins.push(plugin);
        Ok(())
    }

    pub fn with(mut self, plugin: impl ToolPlugin + 'static) -> Result<Self, ServerError> {
        self.register_tool(Arc::new(plugin))?;
        Ok(self)
    }

    pub fn get(&self, tool_id: &str) -> Option<&Arc<dyn ToolPlugin>> {
        self.plugins.iter().find(|p| p.tool_id() == tool_id)
    }

    pub fn by_stop(&self, stop: &str) -> Option<&Arc<dyn ToolPlugin>> {
        self.plugins.iter().find(|p| p.stop_tokens().stop_strings.contains(stop))
    }

    pub fn stop_sets(&self) -> Vec<StopTokenSet> {
        self.plugins.iter().map(|p| p.stop_tokens().clone()).collect()
    }

    pub fn tool_ids(&self) -> Vec<String> {
        self.plugins.iter().map(|p| p.tool_id().to_owned()).collect()
    }

    /// The plugin whose stop string ends `action_text`.
    pub fn route(&self, action_text: &str) -> Option<&Arc<dyn ToolPlugin>> {
        let m = detect_stop(action_text, &self.stop_sets())?;
        self.get(&m.tool_id)
    }

    pub fn len(&self) -> usize {
        self.plugins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plugins.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRequest {
    pub trajectory_id: String,
    pub action_text: String,
    #[serde(default)]
    pub extra: Extra,
    /// Episode-end signal: drop the trajectory's states.
    #[serde(default)]
    pub finish: bool,
}

impl ToolRequest {
    pub fn action(trajectory_id: impl Into<String>, action_text: impl Into<String>) -> Self {
        Self { trajectory_id: trajectory_id.into(), action_text: action_text.into(), extra: Extra::new(), finish: false }
    }

    pub fn finish(trajectory_id: impl Into<String>) -> Self {
        Self { finish: true, ..Self::action(trajectory_id, "") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolResponse {
    pub observation: String,
    pub valid: bool,
    pub done: bool,
    pub latency_ms: f64,
    /// Tool the action was routed to, if any.
    #[serde(default)]
    pub tool_id: Option<String>,
}

impl ToolResponse {
    fn unroutable() -> Self {
        Self { observation: String::new(), valid: false, done: false, latency_ms: 0.0, tool_id: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerSettings {
    pub max_concurrent: usize,
    pub per_call_timeout_ms: u64,
    /// Allowed scheduling delay on top of the per-call timeout.
    pub timeout_slack_ms: u64,
    pub observation_cap_bytes: usize,
}

impl Default for ServerSettings {
    fn default() -> Self {
        Self { max_concurrent: 8, per_call_timeout_ms: 10_000, timeout_slack_ms: 250, observation_cap_bytes: 16 * 1024 }
    }
}

pub struct ToolServer {
    registry: ToolRegistry,
    store: EnvStore,
    pool: WorkerPool,
    settings: ServerSettings,
}

impl ToolServer {
    pub fn new(registry: ToolRegistry, settings: ServerSettings) -> Self {
        Self {
            registry,
            store: EnvStore::new(),
            pool: WorkerPool::new(settings.max_concurrent, Duration::from_millis(settings.per_call_timeout_ms)),
            settings,
        }
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn store(&self) -> &EnvStore {
        &self.store
    }

    pub fn pool(&self) -> &WorkerPool {
        &self.pool
    }

    pub fn settings(&self) -> &ServerSettings {
        &self.settings
    }

    /// Drops every state of the trajectory and runs each tool's teardown.
    pub fn delete_env(&self, trajectory_id: &str) {
        for env in self.store.delete_env(trajectory_id) {
            if let Some(p) = self.registry.get(&env.tool_id) {
                p.teardown_env(&env);
            }
        }
    }

    pub async fn handle_batch(&self, requests: Vec<ToolRequest>) -> Vec<ToolResponse> {
        join_all(requests.iter().map(|r| self.handle_one(r))).await
    }

    pub async fn handle_one(&self, req: &ToolRequest) -> ToolResponse {
        if req.finish {
            let _gate = self.store.lock_trajectory(&req.trajectory_id).await;
            self.delete_env(&req.trajectory_id);
            return ToolResponse { observation: String::new(), valid: true, done: true, latency_ms: 0.0, tool_id: None };
        }
        let Some(plugin) = self.registry.route(&req.action_text) else {
            return ToolResponse::unroutable();
        };
        let tool_id = Some(plugin.tool_id().to_owned());
        let Some(input) = plugin.parse_action(&req.action_text) else {
            return ToolResponse { tool_id, ..ToolResponse::unroutable() };
        };

        let _gate = self.store.lock_trajectory(&req.trajectory_id).await;
        let env = self.store.load_env(&req.trajectory_id, plugin.tool_id(), || plugin.init_env(&req.trajectory_id));
        let mut env = match env {
            Ok(env) => env,
            Err(e) => return self.respond(ToolOutput::invalid(format!("[tool error: {e}]")), 0.0, tool_id),
        };
        // a panicking plugin fails this call only; the trajectory keeps its previous state
        let call = AssertUnwindSafe(plugin.conduct_action(&mut env, &input, &req.extra)).catch_unwind();
        let (out, took) = self.pool.run(call).await;
        let out = out.map(|r| r.unwrap_or_else(|_| Err(ToolError::Crash("plugin panicked".into()))));
        let latency_ms = took.as_secs_f64() * 1e3;
        let output = match out {
            Ok(Ok(output)) => {
                // the state can only be gone if a finish raced in, which the gate prevents
                let _ = self.store.update_env(env);
                output
            }
            Ok(Err(ToolError::Timeout(ms))) => ToolOutput::invalid(timeout_notice(ms)),
            Ok(Err(e)) => ToolOutput::invalid(format!("[tool error: {e}]")),
            Err(TimedOut) => {
                tracing::warn!(trajectory = %req.trajectory_id, tool = plugin.tool_id(), "tool call timed out");
                ToolOutput::invalid(timeout_notice(self.settings.per_call_timeout_ms))
            }
        };
        self.respond(output, latency_ms, tool_id)
    }

    fn respond(&self, out: ToolOutput, latency_ms: f64, tool_id: Option<String>) -> ToolResponse {
        ToolResponse {
            observation: cap_with_marker(&out.observation, self.settings.observation_cap_bytes),
            valid: out.valid,
            done: out.done,
            latency_ms,
            tool_id,
        }
    }
}

pub fn timeout_notice(ms: u64) -> String {
    format!("[tool timeout: execution exceeded {ms} ms]")
}
