use std::sync::Arc;
use std::time::{Duration, Instant};

use futures::future::join_all;
use serde_json::Value;
use tokio::sync::Semaphore;

use super::{EpisodeRecord, Policy, RewardFn, RolloutError, RolloutLimits, SegmentTiming, Task};
use crate::kernel::ScoredReward;
use crate::plugins::extract_answer;
use crate::plugins::sql::MAX_TURNS_FIELD;
use crate::server::{ClientError, ToolClient, ToolRequest, ToolResponse};
use crate::trajectory::{detect_stop, truncate_to_tokens, StopTokenSet, TerminationCause, Tokenizer, Trajectory};

/// Observation shown when no tool accepted an action and the server gave no
/// notice of its own.
pub const INVALID_ACTION_NOTICE: &str = "[invalid action: no tool accepted this call]";

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub records: Vec<EpisodeRecord>,
    pub wall_clock: Duration,
}

enum ToolOutcome {
    Response(ToolResponse),
    Unreachable(String),
    TimedOut,
}

struct Episode<'a> {
    task: &'a Task,
    policy: &'a dyn Policy,
    traj: Trajectory,
    timings: Vec<SegmentTiming>,
    logprobs: Vec<Vec<f64>>,
    started: Instant,
    pending: Option<ToolRequest>,
    error: Option<String>,
}

impl<'a> Episode<'a> {
    fn new(task: &'a Task, policy: &'a dyn Policy, trajectory_id: String) -> Self {
        Self {
            task,
            policy,
            traj: Trajectory::new(trajectory_id),
            timings: Vec::new(),
            logprobs: Vec::new(),
            started: Instant::now(),
            pending: None,
            error: None,
        }
    }

    fn fail(&mut self, msg: String) {
        self.error = Some(msg);
        self.traj.terminate(TerminationCause::Error);
    }
}

/// Runs episodes against one tool server.
pub struct Rollout {
    client: Arc<dyn ToolClient>,
    tokenizer: Arc<dyn Tokenizer>,
    reward: Arc<dyn RewardFn>,
    limits: RolloutLimits,
    stop_sets: Vec<StopTokenSet>,
    stop_strings: Vec<String>,
}

fn trajectory_id(task: &Task, index: usize) -> String {
    format!("{}#{index}", task.id)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl Rollout {
    /// Validates `limits` and reads the stop sets from the server.
    pub async fn connect(
        client: Arc<dyn ToolClient>,
        tokenizer: Arc<dyn Tokenizer>,
        reward: Arc<dyn RewardFn>,
        limits: RolloutLimits,
    ) -> Result<Self, RolloutError> {
        limits.validate()?;
        let stop_sets = client.stop_sets().await.map_err(|e| RolloutError::ServerUnreachable(e.to_string()))?;
        Ok(Self::with_stop_sets(client, tokenizer, reward, limits, stop_sets))
    }

    pub fn with_stop_sets(
        client: Arc<dyn ToolClient>,
        tokenizer: Arc<dyn Tokenizer>,
        reward: Arc<dyn RewardFn>,
        limits: RolloutLimits,
        stop_sets: Vec<StopTokenSet>,
    ) -> Self {
        let mut stop_strings: Vec<String> = stop_sets.iter().flat_map(|s| s.stop_strings.iter().cloned()).collect();
        stop_strings.sort();
        stop_strings.dedup();
        Self { client, tokenizer, reward, limits, stop_sets, stop_strings }
    }

    pub fn limits(&self) -> &RolloutLimits {
        &self.limits
    }

    pub fn stop_strings(&self) -> &[String] {
        &self.stop_strings
    }

    fn remaining(&self, ep: &Episode<'_>) -> Option<Duration> {
        self.limits.episode_timeout_ms.map(|t| Duration::from_millis(t).saturating_sub(ep.started.elapsed()))
    }

    async fn generate(&self, ep: &mut Episode<'_>) {
        let tok = self.tokenizer.as_ref();
        if ep.traj.segments.is_empty() && tok.encode(&ep.task.prompt).len() > self.limits.max_prompt_tokens {
            ep.traj.terminate(TerminationCause::LengthLimit);
            return;
        }
        let remaining = self.remaining(ep);
        if remaining == Some(Duration::ZERO) {
            ep.traj.terminate(TerminationCause::Timeout);
            return;
        }
        let t0 = Instant::now();
        let call = ep.policy.next_action(&ep.task.prompt, &ep.traj, &self.stop_strings);
        let out = match remaining {
            Some(r) => match tokio::time::timeout(r, call).await {
                Ok(out) => out,
                Err(_) => {
                    ep.traj.terminate(TerminationCause::Timeout);
                    return;
                }
            },
            None => call.await,
        };
        let gen_ms = ms(t0.elapsed());
        let out = match out {
            Ok(out) => out,
            Err(e) => return ep.fail(e.to_string()),
        };

        let budget = self.limits.max_response_tokens.saturating_sub(ep.traj.token_count());
        let (text, tokens) = truncate_to_tokens(&out.text, tok, self.limits.max_action_tokens.min(budget));
        let truncated = text != out.text;
        let mut logprobs = out.token_logprobs;
        logprobs.truncate(tokens.len());
        ep.traj.append_action(&text, tok).expect("actions follow observations");
        ep.timings.push(SegmentTiming { gen_ms, tool_ms: 0.0 });
        ep.logprobs.push(logprobs);

        if truncated {
            ep.traj.terminate(TerminationCause::LengthLimit);
        } else if detect_stop(&text, &self.stop_sets).is_none() {
            ep.traj.terminate(TerminationCause::Answer);
        } else if ep.traj.turn_count >= self.limits.max_turns {
            ep.traj.terminate(TerminationCause::MaxTurns);
        } else {
            let mut extra = ep.task.extra.clone();
            extra.entry(MAX_TURNS_FIELD).or_insert(Value::from(self.limits.max_turns));
            ep.pending = Some(ToolRequest { extra, ..ToolRequest::action(ep.traj.id.clone(), text) });
        }
    }

    fn absorb(&self, ep: &mut Episode<'_>, outcome: ToolOutcome) {
        let resp = match outcome {
            ToolOutcome::Response(r) => r,
            ToolOutcome::Unreachable(e) => return ep.fail(e),
            ToolOutcome::TimedOut => return ep.traj.terminate(TerminationCause::Timeout),
        };
        if resp.done {
            let answered = ep.traj.last_action().and_then(|a| extract_answer(&a.text)).is_some();
            ep.traj.terminate(if answered { TerminationCause::Answer } else { TerminationCause::ToolDone });
            return;
        }
        let left = self.limits.max_response_tokens.saturating_sub(ep.traj.token_count());
        // keep room for at least one more action token
        if left < 2 {
            ep.traj.terminate(TerminationCause::LengthLimit);
            return;
        }
        let obs = if !resp.valid && resp.observation.is_empty() { INVALID_ACTION_NOTICE } else { &resp.observation };
        let cap = self.limits.max_obs_tokens.min(left - 1);
        ep.traj.append_observation(obs, self.tokenizer.as_ref(), cap).expect("observations follow actions");
        ep.timings.push(SegmentTiming { gen_ms: 0.0, tool_ms: resp.latency_ms });
    }

    async fn call_tool(&self, req: ToolRequest, remaining: Option<Duration>) -> ToolOutcome {
        let call = self.client.get_observations(vec![req]);
        let res = match remaining {
            Some(r) => match tokio::time::timeout(r, call).await {
                Ok(res) => res,
                Err(_) => return ToolOutcome::TimedOut,
            },
            None => call.await,
        };
        match res {
            Ok(mut v) if v.len() == 1 => ToolOutcome::Response(v.remove(0)),
            Ok(v) => ToolOutcome::Unreachable(format!("expected 1 response, got {}", v.len())),
            Err(e) => ToolOutcome::Unreachable(e.to_string()),
        }
    }

    /// Releases server-side state; the episode is over either way.
    async fn finish(&self, ids: Vec<String>) {
        if ids.is_empty() {
            return;
        }
        let reqs = ids.into_iter().map(ToolRequest::finish).collect();
        if let Err(e) = self.client.get_observations(reqs).await {
            tracing::warn!("finish signal failed: {e}");
        }
    }

    fn record(&self, ep: Episode<'_>) -> EpisodeRecord {
        let cause = ep.traj.termination_cause.expect("episode terminated");
        let scored = if cause.is_abnormal() {
            ScoredReward::single("abnormal", 0.0)
        } else {
            self.reward.score(ep.task, &ep.traj)
        };
        EpisodeRecord {
            task_id: ep.task.id.clone(),
            prompt: ep.task.prompt.clone(),
            trajectory: ep.traj,
            timings: ep.timings,
            action_logprobs: ep.logprobs,
            reward: scored.total,
            reward_breakdown: scored.breakdown,
            policy_id: ep.policy.id().to_owned(),
            limits: self.limits,
            error: ep.error,
        }
    }

    /// Runs one episode to termination.
    pub async fn run_trajectory(&self, policy: &dyn Policy, task: &Task, trajectory_id: &str) -> EpisodeRecord {
        let mut ep = Episode::new(task, policy, trajectory_id.to_owned());
        loop {
            self.generate(&mut ep).await;
            let Some(req) = ep.pending.take() else { break };
            let outcome = self.call_tool(req, self.remaining(&ep)).await;
            self.absorb(&mut ep, outcome);
            if ep.traj.terminated {
                break;
            }
        }
        self.finish(vec![ep.traj.id.clone()]).await;
        self.record(ep)
    }

    fn check_batch(policies: &[Arc<dyn Policy>], tasks: &[Task]) -> Result<(), RolloutError> {
        if policies.is_empty() && !tasks.is_empty() {
            return Err(RolloutError::Policy("no policy given".into()));
        }
        Ok(())
    }

    /// Lockstep batches: each turn, every live trajectory generates, then
    /// all tool calls go to the server as one batch. Task `i` uses policy
    /// `i % policies.len()`.
    pub async fn run_batch_sync(
        &self,
        policies: &[Arc<dyn Policy>],
        tasks: &[Task],
    ) -> Result<BatchOutcome, RolloutError> {
        Self::check_batch(policies, tasks)?;
        let start = Instant::now();
        let mut eps: Vec<Episode<'_>> = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| Episode::new(t, policies[i % policies.len()].as_ref(), trajectory_id(t, i)))
            .collect();
        let mut released = vec![false; eps.len()];
        while eps.iter().any(|e| !e.traj.terminated) {
            join_all(eps.iter_mut().filter(|e| !e.traj.terminated).map(|e| self.generate(e))).await;

            let (idx, reqs): (Vec<usize>, Vec<ToolRequest>) =
                eps.iter_mut().enumerate().filter_map(|(i, e)| e.pending.take().map(|r| (i, r))).unzip();
            if !reqs.is_empty() {
                match self.client.get_observations(reqs).await {
                    Ok(resps) if resps.len() == idx.len() => {
                        for (i, r) in idx.into_iter().zip(resps) {
                            self.absorb(&mut eps[i], ToolOutcome::Response(r));
                        }
                    }
                    other => {
                        let msg = match other {
                            Err(ClientError::Unreachable(m) | ClientError::Protocol(m)) => m,
                            Ok(r) => format!("expected {} responses, got {}", idx.len(), r.len()),
                        };
                        for i in idx {
                            self.absorb(&mut eps[i], ToolOutcome::Unreachable(msg.clone()));
                        }
                    }
                }
            }

            let mut done = Vec::new();
            for (e, sent) in eps.iter().zip(released.iter_mut()) {
                if e.traj.terminated && !*sent {
                    *sent = true;
                    done.push(e.traj.id.clone());
                }
            }
            self.finish(done).await;
        }
        let records = eps.into_iter().map(|e| self.record(e)).collect();
        Ok(BatchOutcome { records, wall_clock: start.elapsed() })
    }

    /// One independent task per trajectory, at most `max_parallel` running
    /// at once. Each trajectory calls the server as soon as its action is
    /// ready.
    pub async fn run_batch_async(
        &self,
        policies: &[Arc<dyn Policy>],
        tasks: &[Task],
        max_parallel: usize,
    ) -> Result<BatchOutcome, RolloutError> {
        Self::check_batch(policies, tasks)?;
        if max_parallel == 0 {
            return Err(RolloutError::Limits("max_parallel must be at least 1".into()));
        }
        let start = Instant::now();
        let gate = Semaphore::new(max_parallel);
        let runs = tasks.iter().enumerate().map(|(i, t)| {
            let gate = &gate;
            async move {
                let _slot = gate.acquire().await.expect("semaphore never closed");
                self.run_trajectory(policies[i % policies.len()].as_ref(), t, &trajectory_id(t, i)).await
            }
        });
        let records = join_all(runs).await;
        Ok(BatchOutcome { records, wall_clock: start.elapsed() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plugins::{CalculatorPlugin, FinishPlugin, SleepPlugin};
    use crate::rollout::{AnswerReward, RewardKind, ScriptedPolicy};
    use crate::server::{LocalToolClient, ServerSettings, ToolRegistry, ToolServer};
    use crate::trajectory::{Origin, ToyMergeTokenizer};

    struct DeadClient;

    #[async_trait::async_trait]
    impl ToolClient for DeadClient {
        async fn get_observations(&self, _: Vec<ToolRequest>) -> Result<Vec<ToolResponse>, ClientError> {
            Err(ClientError::Unreachable("connection refused".into()))
        }
        async fn stop_sets(&self) -> Result<Vec<StopTokenSet>, ClientError> {
            Ok(vec![StopTokenSet::new("calculator", ["</calculator>"]).unwrap()])
        }
    }

    fn tok() -> Arc<dyn Tokenizer> {
        Arc::new(ToyMergeTokenizer::default())
    }

    fn server() -> Arc<ToolServer> {
        let reg = ToolRegistry::new()
            .with(CalculatorPlugin::default())
            .unwrap()
            .with(SleepPlugin::default())
            .unwrap()
            .with(FinishPlugin::default())
            .unwrap();
        Arc::new(ToolServer::new(reg, ServerSettings::default()))
    }

    async fn rollout_with(client: Arc<dyn ToolClient>, limits: RolloutLimits) -> Rollout {
        Rollout::connect(client, tok(), Arc::new(AnswerReward::new(RewardKind::Match)), limits).await.unwrap()
    }

    async fn local(limits: RolloutLimits) -> (Rollout, Arc<ToolServer>) {
        let s = server();
        (rollout_with(Arc::new(LocalToolClient::new(s.clone())), limits).await, s)
    }

    #[tokio::test]
    async fn immediate_answer() {
        let (r, s) = local(RolloutLimits::default()).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_script("q", ["<answer>x</answer>"]);
        let task = Task::new("t", "q").with_gold("x");
        let rec = r.run_trajectory(&p, &task, "t#0").await;
        assert_eq!(rec.trajectory.segments.len(), 1);
        assert_eq!(rec.trajectory.turn_count, 0);
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::Answer));
        assert_eq!(rec.reward, 1.0);
        assert!(s.store().is_empty());
    }

    #[tokio::test]
    async fn tool_then_answer() {
        let (r, s) = local(RolloutLimits::default()).await;
        let p = ScriptedPolicy::new("p", tok(), 0)
            .with_script("q", ["<calculator>3947/7</calculator>", "<answer>563.857142857143</answer>"]);
        let task = Task::new("t", "q").with_gold("563.857142857143");
        let rec = r.run_trajectory(&p, &task, "t#0").await;
        let origins: Vec<Origin> = rec.trajectory.segments.iter().map(|s| s.origin).collect();
        assert_eq!(origins, [Origin::Action, Origin::Observation, Origin::Action]);
        assert_eq!(rec.trajectory.segments[1].text, "563.857142857143");
        assert_eq!(rec.timings.len(), 3);
        assert_eq!(rec.action_logprobs.len(), 2);
        assert_eq!(rec.reward, 1.0);
        assert!(rec.trajectory.is_well_formed());
        assert!(s.store().is_empty());
    }

    #[tokio::test]
    async fn never_answers_hits_max_turns() {
        let (r, _) = local(RolloutLimits { max_turns: 5, ..Default::default() }).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_fallback("<calculator>1+1</calculator>");
        let rec = r.run_trajectory(&p, &Task::new("t", "q"), "t#0").await;
        assert_eq!(rec.trajectory.turn_count, 5);
        assert_eq!(rec.trajectory.segments.len(), 11);
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::MaxTurns));
    }

    #[tokio::test]
    async fn finish_tool_ends_episode() {
        let (r, _) = local(RolloutLimits::default()).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_script("q", ["done: <answer>7</answer>"]);
        let rec = r.run_trajectory(&p, &Task::new("t", "q").with_gold("7"), "t#0").await;
        assert_eq!(rec.trajectory.segments.len(), 1);
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::Answer));
        assert_eq!(rec.reward, 1.0);
    }

    #[tokio::test]
    async fn invalid_call_gets_notice() {
        let (r, _) = local(RolloutLimits::default()).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_script("q", ["<sleep>soon</sleep>", "<answer>a</answer>"]);
        let rec = r.run_trajectory(&p, &Task::new("t", "q"), "t#0").await;
        assert_eq!(rec.trajectory.segments[1].text, INVALID_ACTION_NOTICE);
    }

    #[tokio::test]
    async fn unreachable_server_is_error_with_zero_reward() {
        let r = rollout_with(Arc::new(DeadClient), RolloutLimits::default()).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_script("q", ["<calculator>1</calculator>"]);
        let rec = r.run_trajectory(&p, &Task::new("t", "q").with_gold("1"), "t#0").await;
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::Error));
        assert_eq!(rec.reward, 0.0);
        assert!(rec.error.unwrap().contains("connection refused"));
    }

    #[tokio::test]
    async fn budgets_are_respected() {
        let limits = RolloutLimits { max_action_tokens: 4, ..Default::default() };
        let (r, _) = local(limits).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_script("q", ["a long rambling action with no end"]);
        let rec = r.run_trajectory(&p, &Task::new("t", "q"), "t#0").await;
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::LengthLimit));
        assert_eq!(rec.trajectory.segments[0].len(), 4);
        assert_eq!(rec.action_logprobs[0].len(), 4);

        let limits = RolloutLimits { max_prompt_tokens: 3, ..Default::default() };
        let (r, _) = local(limits).await;
        let rec = r.run_trajectory(&p, &Task::new("t", "a prompt that is too long"), "t#0").await;
        assert!(rec.trajectory.segments.is_empty());
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::LengthLimit));

        let limits = RolloutLimits { max_response_tokens: 30, max_turns: 50, ..Default::default() };
        let (r, _) = local(limits).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_fallback("<sleep>1</sleep>");
        let rec = r.run_trajectory(&p, &Task::new("t", "q"), "t#0").await;
        assert!(rec.trajectory.token_count() <= 30);
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::LengthLimit));
    }

    #[tokio::test]
    async fn episode_timeout() {
        let limits = RolloutLimits { episode_timeout_ms: Some(150), ..Default::default() };
        let (r, _) = local(limits).await;
        let p = ScriptedPolicy::new("p", tok(), 0).with_fallback("<sleep>100</sleep>");
        let rec = r.run_trajectory(&p, &Task::new("t", "q"), "t#0").await;
        assert_eq!(rec.trajectory.termination_cause, Some(TerminationCause::Timeout));
        assert_eq!(rec.reward, 0.0);
        assert!(rec.trajectory.is_well_formed());
    }

    #[tokio::test]
    async fn sync_and_async_agree() {
        let (r, s) = local(RolloutLimits::default()).await;
        let mut p = ScriptedPolicy::new("p", tok(), 9);
        let mut tasks = Vec::new();
        for i in 0..6 {
            let prompt = format!("task {i}");
            let mut actions: Vec<String> = (0..i % 3).map(|k| format!("<calculator>{i}*{k}</calculator>")).collect();
            actions.push(format!("<answer>{i}</answer>"));
            p = p.with_script(&prompt, actions);
            tasks.push(Task::new(format!("t{i}"), prompt).with_gold(i.to_string()));
        }
        let policies: Vec<Arc<dyn Policy>> = vec![Arc::new(p)];
        let a = r.run_batch_sync(&policies, &tasks).await.unwrap();
        let b = r.run_batch_async(&policies, &tasks, 2).await.unwrap();
        for (x, y) in a.records.iter().zip(&b.records) {
            assert_eq!(x.trajectory, y.trajectory);
            assert_eq!(x.action_logprobs, y.action_logprobs);
            assert_eq!(x.reward, 1.0);
        }
        assert!(s.store().is_empty());
    }
}
