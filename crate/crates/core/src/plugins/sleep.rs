use std::time::Duration;

use async_trait::async_trait;

use crate::server::{EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::between_last;
use crate::trajectory::StopTokenSet;

/// Simulated tool latency: `<sleep>MS</sleep>` waits MS milliseconds.
/// Used by the scheduler benchmark and by timeout tests.
pub struct SleepPlugin {
    stops: StopTokenSet,
}

impl Default for SleepPlugin {
    fn default() -> Self {
        Self { stops: StopTokenSet::new("sleep", ["</sleep>"]).expect("non-empty") }
    }
}

#[async_trait]
impl ToolPlugin for SleepPlugin {
    fn tool_id(&self) -> &str {
        "sleep"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        let ms = between_last(action_text, "<sleep>", "</sleep>")?;
        ms.trim().parse::<u64>().ok().map(|v| v.to_string())
    }

    async fn conduct_action(&self, _env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        let ms: u64 = input.parse().map_err(|_| ToolError::Crash(format!("bad duration {input:?}")))?;
        tokio::time::sleep(Duration::from_millis(ms)).await;
        Ok(ToolOutput::ok(format!("slept {ms} ms")))
    }
}
