use async_trait::async_trait;

use crate::server::{EnvState, Extra, ToolError, ToolOutput, ToolPlugin};
use crate::text::between_last;
use crate::trajectory::StopTokenSet;

/// Trimmed payload of the last `<answer>...</answer>` ending the text.
pub fn finish_parse(action_text: &str) -> Option<String> {
    between_last(action_text.trim_end(), "<answer>", "</answer>").map(|s| s.trim().to_owned())
}

/// Answer payload from either `<answer>` or `<solution>` tags anywhere in
/// the text (last occurrence wins).
pub fn extract_answer(text: &str) -> Option<String> {
    ["answer", "solution"].iter().find_map(|tag| {
        let open = format!("<{tag}>");
        let close = format!("</{tag}>");
        let end = text.rfind(&close)?;
        let start = text[..end].rfind(&open)? + open.len();
        Some(text[start..end].trim().to_owned())
    })
}

/// Ends the episode. Always answers with an empty observation and `done`.
pub struct FinishPlugin {
    stops: StopTokenSet,
}

impl Default for FinishPlugin {
    fn default() -> Self {
        Self { stops: StopTokenSet::new("finish", ["</answer>"]).expect("non-empty") }
    }
}

#[async_trait]
impl ToolPlugin for FinishPlugin {
    fn tool_id(&self) -> &str {
        "finish"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        finish_parse(action_text)
    }

    async fn conduct_action(&self, _env: &mut EnvState, _input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        Ok(ToolOutput::done(""))
    }
}
