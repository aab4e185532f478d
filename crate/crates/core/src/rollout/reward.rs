use std::path::Path;
use std::sync::Arc;

use parking_lot::Mutex;
use rusqlite::Connection;
use serde::{Deserialize, Serialize};

use super::Task;
use crate::kernel::{reward_deepsearch, reward_match, reward_math, Matcher, NormalizedExact, ScoredReward};
use crate::plugins::extract_answer;
use crate::plugins::sql::{materialize_fixture, result_rows};
use crate::trajectory::Trajectory;

/// Scores a finished trajectory.
pub trait RewardFn: Send + Sync {
    fn score(&self, task: &Task, traj: &Trajectory) -> ScoredReward;
}

impl<F: Fn(&Task, &Trajectory) -> ScoredReward + Send + Sync> RewardFn for F {
    fn score(&self, task: &Task, traj: &Trajectory) -> ScoredReward {
        self(task, traj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    /// `+1` / `-1` on the final answer.
    Match,
    /// Match with the miss penalty.
    Math,
    /// Match plus a bonus when any tool was called.
    Deepsearch,
    /// Always zero.
    None,
}

/// Scores the answer found in the last action against `task.gold`.
pub struct AnswerReward {
    kind: RewardKind,
    matcher: Arc<dyn Matcher + Send + Sync>,
}

impl AnswerReward {
    pub fn new(kind: RewardKind) -> Self {
        Self { kind, matcher: Arc::new(NormalizedExact) }
    }

    pub fn with_matcher(kind: RewardKind, matcher: Arc<dyn Matcher + Send + Sync>) -> Self {
        Self { kind, matcher }
    }
}

impl RewardFn for AnswerReward {
    fn score(&self, task: &Task, traj: &Trajectory) -> ScoredReward {
        let answer = traj.last_action().and_then(|a| extract_answer(&a.text)).unwrap_or_default();
        let gold = task.gold.as_deref().unwrap_or("");
        let m = self.matcher.as_ref();
        let (name, v) = match self.kind {
            RewardKind::Match => ("match", reward_match(&answer, gold, m)),
            RewardKind::Math => ("math", reward_math(&answer, gold, m)),
            RewardKind::Deepsearch => ("deepsearch", reward_deepsearch(&answer, gold, m, traj.turn_count > 0)),
            RewardKind::None => ("none", 0.0),
        };
        ScoredReward::single(name, v)
    }
}

/// Treats two queries as equal when they return the same rows (order
/// ignored) on a private copy of the fixture database.
pub struct SqlExecutionMatcher {
    conn: Mutex<Connection>,
    _dir: tempfile::TempDir,
}

impl SqlExecutionMatcher {
    pub fn new(fixture: &Path) -> Result<Self, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let db = dir.path().join("gold.sqlite");
        materialize_fixture(fixture, &db)?;
        let conn = Connection::open(&db).map_err(|e| e.to_string())?;
        Ok(Self { conn: Mutex::new(conn), _dir: dir })
    }
}

impl Matcher for SqlExecutionMatcher {
    fn matches(&self, answer: &str, gold: &str) -> bool {
        let conn = self.conn.lock();
        match (result_rows(&conn, answer), result_rows(&conn, gold)) {
            (Ok(a), Ok(g)) => a == g,
            _ => false,
        }
    }
}
