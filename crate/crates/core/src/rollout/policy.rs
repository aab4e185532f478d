use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RolloutError;
use crate::trajectory::{Origin, Tokenizer, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyOutput {
    pub text: String,
    /// One log-probability per token of `text`.
    pub token_logprobs: Vec<f64>,
}

/// Produces the next action of a trajectory.
///
/// `prompt` is the task's initial prompt; the full context is the prompt
/// followed by the trajectory text (see [`render_context`]).
#[async_trait]
pub trait Policy: Send + Sync {
    fn id(&self) -> &str;

    async fn next_action(
        &self,
        prompt: &str,
        traj: &Trajectory,
        stop_strings: &[String],
    ) -> Result<PolicyOutput, RolloutError>;
}

/// The text a policy conditions on at the current turn.
pub fn render_context(prompt: &str, traj: &Trajectory) -> String {
    let mut s = prompt.to_owned();
    s.push_str(&traj.text());
    s
}

/// Hash of the prompt with whitespace runs collapsed.
pub fn fingerprint(prompt: &str) -> String {
    let norm = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    let digest = Sha256::digest(norm.as_bytes());
    digest.iter().take(12).map(|b| format!("{b:02x}")).collect()
}

/// Simulated generation latency.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum LatencySchedule {
    #[default]
    None,
    Fixed(Duration),
    /// Latency of turn `t` is entry `t`; later turns take no time.
    PerTurn(Vec<Duration>),
    /// Uniform in `[lo, hi]`, drawn from a stream keyed by seed, prompt and turn.
    Uniform { lo: Duration, hi: Duration },
}

/// Deterministic stand-in for a language model: actions come from a script
/// keyed by prompt fingerprint and turn index.
pub struct ScriptedPolicy {
    id: String,
    script: HashMap<(String, usize), String>,
    fallback: Option<String>,
    latency: LatencySchedule,
    seed: u64,
    tokenizer: Arc<dyn Tokenizer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub prompt: String,
    pub actions: Vec<String>,
}

impl ScriptedPolicy {
    pub fn new(id: impl Into<String>, tokenizer: Arc<dyn Tokenizer>, seed: u64) -> Self {
        Self {
            id: id.into(),
            script: HashMap::new(),
            fallback: None,
            latency: LatencySchedule::None,
            seed,
            tokenizer,
        }
    }

    /// Scripts `actions` as turns `0..` for `prompt`.
    pub fn with_script(mut self, prompt: &str, actions: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let fp = fingerprint(prompt);
        for (turn, a) in actions.into_iter().enumerate() {
            self.script.insert((fp.clone(), turn), a.into());
        }
        self
    }

    /// Action used when the script has no entry.
    pub fn with_fallback(mut self, action: impl Into<String>) -> Self {
        self.fallback = Some(action.into());
        self
    }

    pub fn with_latency(mut self, latency: LatencySchedule) -> Self {
        self.latency = latency;
        self
    }

    /// Loads `{"prompt": ..., "actions": [...]}` lines.
    pub fn from_jsonl(
        id: impl Into<String>,
        path: &Path,
        tokenizer: Arc<dyn Tokenizer>,
        seed: u64,
    ) -> Result<Self, RolloutError> {
        let text = std::fs::read_to_string(path).map_err(|e| RolloutError::Io(format!("{}: {e}", path.display())))?;
        let mut policy = Self::new(id, tokenizer, seed);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ScriptEntry =
                serde_json::from_str(line).map_err(|e| RolloutError::Parse { line: i + 1, msg: e.to_string() })?;
            policy = policy.with_script(&entry.prompt, entry.actions);
        }
        Ok(policy)
    }

    fn rng(&self, fp: &str, turn: usize, stream: u64) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(fp.as_bytes());
        h.update((turn as u64).to_le_bytes());
        h.update(stream.to_le_bytes());
        let d = h.finalize();
        ChaCha8Rng::from_seed(d.into())
    }

    fn latency_for(&self, fp: &str, turn: usize) -> Duration {
        match &self.latency {
            LatencySchedule::None => Duration::ZERO,
            LatencySchedule::Fixed(d) => *d,
            LatencySchedule::PerTurn(v) => v.get(turn).copied().unwrap_or(Duration::ZERO),
            LatencySchedule::Uniform { lo, hi } => {
                let x: f64 = self.rng(fp, turn, 1).gen_range(lo.as_secs_f64()..=hi.as_secs_f64());
                Duration::from_secs_f64(x)
            }
        }
    }
}

#[async_trait]
impl Policy for ScriptedPolicy {
    fn id(&self) -> &str {
        &self.id
    }

    async fn next_action(
        &self,
        prompt: &str,
        traj: &Trajectory,
        _stop_strings: &[String],
    ) -> Result<PolicyOutput, RolloutError> {
        let fp = fingerprint(prompt);
        let turn = traj.segments.iter().filter(|s| s.origin == Origin::Action).count();
        let text = self
            .script
            .get(&(fp.clone(), turn))
            .or(self.fallback.as_ref())
            .cloned()
            .ok_or_else(|| RolloutError::Policy(format!("no scripted action for turn {turn} of prompt {fp}")))?;
        let delay = self.latency_for(&fp, turn);
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        let n = self.tokenizer.encode(&text).len();
        let mut rng = self.rng(&fp, turn, 0);
        let token_logprobs = (0..n).map(|_| -rng.gen_range(0.01..3.0)).collect();
        Ok(PolicyOutput { text, token_logprobs })
    }
}

/// Text-completion service over HTTP.
///
/// Request `{"prompt", "stop": [...], "max_tokens"}`, response
/// `{"text", "token_logprobs": [...]}`.
pub struct RemotePolicy {
    id: String,
    url: String,
    max_tokens: usize,
    http: reqwest::Client,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    stop: &'a [String],
    max_tokens: usize,
}

impl RemotePolicy {
    pub fn new(url: impl Into<String>, timeout: Duration, max_tokens: usize) -> Result<Self, RolloutError> {
        let url = url.into();
        let http = reqwest::Client::builder().timeout(timeout).build().map_err(|e| RolloutError::Policy(e.to_string()))?;
        Ok(Self { id: format!("remote:{url}"), url, max_tokens, http })
    }
}

#[async_trait]
impl Policy for RemotePolicy {
    fn id(&self) -> &str {
        &self.id
    }

    async fn next_action(
        &self,
        prompt: &str,
        traj: &Trajectory,
        stop_strings: &[String],
    ) -> Result<PolicyOutput, RolloutError> {
        let context = render_context(prompt, traj);
        let body = CompletionRequest { prompt: &context, stop: stop_strings, max_tokens: self.max_tokens };
        let resp = self
            .http
            .post(&self.url)
            .json(&body)
            .send()
            .await
            .map_err(|e| RolloutError::Policy(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RolloutError::Policy(format!("policy service returned {}", resp.status())));
        }
        resp.json().await.map_err(|e| RolloutError::Policy(e.to_string()))
    }
}
