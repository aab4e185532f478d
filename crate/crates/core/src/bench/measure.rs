use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BenchError, ScheduleTrace};
use crate::plugins::SleepPlugin;
use crate::rollout::{
    AnswerReward, EpisodeRecord, LatencySchedule, Policy, RewardKind, Rollout, RolloutLimits, ScriptedPolicy, Task,
};
use crate::server::{LocalToolClient, ServerSettings, ToolRegistry, ToolServer};
use crate::trajectory::{Tokenizer, ToyMergeTokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Sync,
    Async { max_parallel: usize },
}

#[derive(Debug, Clone)]
pub struct MeasuredRun {
    pub wall_s: f64,
    pub records: Vec<EpisodeRecord>,
}

/// Replays `trace` through the real schedulers. Trajectory `i` is a scripted
/// policy that sleeps `gen[i][t]` before emitting `<sleep>tool[i][t]</sleep>`,
/// served by an in-process [`SleepPlugin`] with one pool slot per
/// trajectory.
pub async fn measure(trace: &ScheduleTrace, mode: Mode) -> Result<MeasuredRun, BenchError> {
    let n = trace.batch();
    let longest_call = trace.tool().iter().flatten().copied().max().unwrap_or(0);
    let settings = ServerSettings {
        max_concurrent: n.max(1),
        per_call_timeout_ms: longest_call + 10_000,
        ..ServerSettings::default()
    };
    let registry = ToolRegistry::new().with(SleepPlugin::default()).map_err(|e| BenchError::Run(e.to_string()))?;
    let server = Arc::new(ToolServer::new(registry, settings));
    let tokenizer: Arc<dyn Tokenizer> = Arc::new(ToyMergeTokenizer::default());

    let mut policies: Vec<Arc<dyn Policy>> = Vec::with_capacity(n);
    let mut tasks = Vec::with_capacity(n);
    for i in 0..n {
        let prompt = format!("bench trajectory {i}");
        let mut actions: Vec<String> = trace.tool()[i].iter().map(|ms| format!("<sleep>{ms}</sleep>")).collect();
        actions.push("<answer>done</answer>".into());
        let delays = trace.gen()[i].iter().map(|&ms| Duration::from_millis(ms)).collect();
        let p = ScriptedPolicy::new(format!("bench-{i}"), tokenizer.clone(), 0)
            .with_script(&prompt, actions)
            .with_latency(LatencySchedule::PerTurn(delays));
        policies.push(Arc::new(p));
        tasks.push(Task::new(format!("b{i}"), prompt));
    }

    let limits = RolloutLimits {
        max_turns: trace.max_turns().max(1),
        max_prompt_tokens: 1 << 16,
        max_response_tokens: 1 << 20,
        max_action_tokens: 1 << 16,
        max_obs_tokens: 1 << 16,
        episode_timeout_ms: None,
    };
    let rollout = Rollout::with_stop_sets(
        Arc::new(LocalToolClient::new(server.clone())),
        tokenizer,
        Arc::new(AnswerReward::new(RewardKind::None)),
        limits,
        server.registry().stop_sets(),
    );
    let outcome = match mode {
        Mode::Sync => rollout.run_batch_sync(&policies, &tasks).await,
        Mode::Async { max_parallel } => rollout.run_batch_async(&policies, &tasks, max_parallel).await,
    }
    .map_err(|e| BenchError::Run(e.to_string()))?;
    Ok(MeasuredRun { wall_s: outcome.wall_clock.as_secs_f64(), records: outcome.records })
}
