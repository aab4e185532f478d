//! Per-(trajectory, tool) state store.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{Mutex as AsyncMutex, OwnedMutexGuard};

use super::ServerError;

pub type EnvData = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub trajectory_id: String,
    pub tool_id: String,
    pub data: EnvData,
    /// Unix milliseconds.
    pub created_at: u64,
    pub last_used: u64,
}

impl EnvState {
    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.data.get(key).and_then(Value::as_str)
    }

    pub fn get_u64(&self, key: &str) -> Option<u64> {
        self.data.get(key).and_then(Value::as_u64)
    }
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

type Key = (String, String);

/// In-memory store of [`EnvState`]s, plus one async gate per trajectory so
/// that tool executions for the same trajectory run one at a time.
#[derive(Default)]
pub struct EnvStore {
    states: Mutex<HashMap<Key, EnvState>>,
    gates: Mutex<HashMap<String, Arc<AsyncMutex<()>>>>,
}

impl EnvStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the stored state, creating it with `init` on first use.
    pub fn load_env<E>(
        &self,
        trajectory_id: &str,
        tool_id: &str,
        init: impl FnOnce() -> Result<EnvData, E>,
    ) -> Result<EnvState, E> {
        let key = (trajectory_id.to_owned(), tool_id.to_owned());
        if let Some(env) = self.states.lock().get_mut(&key) {
            env.last_used = now_ms();
            return Ok(env.clone());
        }
        let data = init()?;
        let now = now_ms();
        let fresh = EnvState {
            trajectory_id: key.0.clone(),
            tool_id: key.1.clone(),
            data,
            created_at: now,
            last_used: now,
        };
        Ok(self.states.lock().entry(key).or_insert(fresh).clone())
    }

    pub fn update_env(&self, env: EnvState) -> Result<(), ServerError> {
        let key = (env.trajectory_id.clone(), env.tool_id.clone());
        match self.states.lock().get_mut(&key) {
            Some(slot) => {
                *slot = EnvState { last_used: now_ms(), ..env };
                Ok(())
            }
            None => Err(ServerError::UnknownEnv { trajectory_id: key.0, tool_id: key.1 }),
        }
    }

    /// Removes every state of the trajectory and returns them for teardown.
    pub fn delete_env(&self, trajectory_id: &str) -> Vec<EnvState> {
        let removed: Vec<EnvState> = {
            let mut states = self.states.lock();
            let keys: Vec<Key> = states.keys().filter(|(t, _)| t == trajectory_id).cloned().collect();
            keys.into_iter().filter_map(|k| states.remove(&k)).collect()
        };
        let mut gates = self.gates.lock();
        if gates.get(trajectory_id).is_some_and(|g| Arc::strong_count(g) == 1) {
            gates.remove(trajectory_id);
        }
        removed
    }

    /// Waits for exclusive use of the trajectory's states.
    pub async fn lock_trajectory(&self, trajectory_id: &str) -> OwnedMutexGuard<()> {
        let gate = self.gates.lock().entry(trajectory_id.to_owned()).or_default().clone();
        gate.lock_owned().await
    }

    pub fn len(&self) -> usize {
        self.states.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
