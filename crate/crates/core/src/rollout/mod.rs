//! Multi-turn episodes between a policy and a tool server.
//!
//! [`Rollout`] owns the shared pieces (tool client, tokenizer, reward,
//! limits) and runs trajectories one at a time, in lockstep batches, or as
//! independent tasks.

mod episode;
pub mod log;
mod policy;
mod reward;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::server::Extra;
use crate::trajectory::Trajectory;

pub use episode::{BatchOutcome, Rollout, INVALID_ACTION_NOTICE};
pub use log::{read_episodes, write_episodes};
pub use policy::{
    fingerprint, render_context, LatencySchedule, Policy, PolicyOutput, RemotePolicy, ScriptEntry, ScriptedPolicy,
};
pub use reward::{AnswerReward, RewardFn, RewardKind, SqlExecutionMatcher};

#[derive(Debug, Error)]
pub enum RolloutError {
    #[error("policy failed: {0}")]
    Policy(String),
    #[error("tool server unreachable: {0}")]
    ServerUnreachable(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("invalid rollout limits: {0}")]
    Limits(String),
}

/// One prompt to roll out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    #[serde(default)]
    pub gold: Option<String>,
    /// Forwarded to every tool call of the episode.
    #[serde(default)]
    pub extra: Extra,
}

impl Task {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        Self { id: id.into(), prompt: prompt.into(), gold: None, extra: Extra::new() }
    }

    pub fn with_gold(mut self, gold: impl Into<String>) -> Self {
        self.gold = Some(gold.into());
        self
    }
}

/// Per-episode bounds. Observation and action tokens both count against
/// `max_response_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutLimits {
    pub max_turns: usize,
    pub max_prompt_tokens: usize,
    pub max_response_tokens: usize,
    pub max_action_tokens: usize,
    pub max_obs_tokens: usize,
    #[serde(default)]
    pub episode_timeout_ms: Option<u64>,
}

impl Default for RolloutLimits {
    fn default() -> Self {
        Self {
            max_turns: 5,
            max_prompt_tokens: 4096,
            max_response_tokens: 8192,
            max_action_tokens: 1024,
            max_obs_tokens: 1024,
            episode_timeout_ms: None,
        }
    }
}

impl RolloutLimits {
    pub fn validate(&self) -> Result<(), RolloutError> {
        let fields = [
            ("max_turns", self.max_turns),
            ("max_prompt_tokens", self.max_prompt_tokens),
            ("max_response_tokens", self.max_response_tokens),
            ("max_action_tokens", self.max_action_tokens),
            ("max_obs_tokens", self.max_obs_tokens),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(RolloutError::Limits(format!("{name} must be positive")));
        }
        if self.episode_timeout_ms == Some(0) {
            return Err(RolloutError::Limits("episode_timeout_ms must be positive".into()));
        }
        Ok(())
    }
}

/// Time spent producing one segment: generation for actions, tool
/// execution for observations.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SegmentTiming {
    pub gen_ms: f64,
    pub tool_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: String,
    pub prompt: String,
    pub trajectory: Trajectory,
    /// Aligned with `trajectory.segments`.
    pub timings: Vec<SegmentTiming>,
    /// Behaviour-policy log-probabilities, one list per action segment.
    pub action_logprobs: Vec<Vec<f64>>,
    pub reward: f64,
    pub reward_breakdown: BTreeMap<String, f64>,
    pub policy_id: String,
    pub limits: RolloutLimits,
    #[serde(default)]
    pub error: Option<String>,
}
