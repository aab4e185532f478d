//! Writing a tool plugin with per-trajectory state.
//!
//! `cargo run --example custom_plugin`

use std::sync::Arc;

use async_trait::async_trait;
use serde_json::Value;
use toolrl::server::{
    EnvData, EnvState, Extra, ServerSettings, ToolError, ToolOutput, ToolPlugin, ToolRegistry, ToolRequest,
    ToolServer,
};
use toolrl::text::between_last;
use toolrl::trajectory::StopTokenSet;

/// `<note>text</note>` appends to a per-trajectory notebook and echoes it.
struct Notebook {
    stops: StopTokenSet,
}

#[async_trait]
impl ToolPlugin for Notebook {
    fn tool_id(&self) -> &str {
        "notebook"
    }

    fn stop_tokens(&self) -> &StopTokenSet {
        &self.stops
    }

    fn parse_action(&self, action_text: &str) -> Option<String> {
        between_last(action_text, "<note>", "</note>")
    }

    fn init_env(&self, _trajectory_id: &str) -> Result<EnvData, ToolError> {
        Ok(EnvData::from([("notes".to_owned(), Value::Array(vec![]))]))
    }

    async fn conduct_action(&self, env: &mut EnvState, input: &str, _extra: &Extra) -> Result<ToolOutput, ToolError> {
        let notes = env.data.get_mut("notes").and_then(Value::as_array_mut).ok_or(ToolError::Env("no notebook".into()))?;
        notes.push(Value::from(input.trim()));
        let all: Vec<&str> = notes.iter().filter_map(Value::as_str).collect();
        Ok(ToolOutput::ok(all.join(" | ")))
    }
}

#[tokio::main]
async fn main() {
    let notebook = Notebook { stops: StopTokenSet::new("notebook", ["</note>"]).unwrap() };
    let registry = ToolRegistry::new().with(notebook).unwrap();
    let server = Arc::new(ToolServer::new(registry, ServerSettings::default()));

    let batch = vec![
        ToolRequest::action("alice", "<note>buy milk</note>"),
        ToolRequest::action("bob", "<note>call home</note>"),
        ToolRequest::action("carol", "no tool call here"),
    ];
    for (req, resp) in batch.iter().zip(server.handle_batch(batch.clone()).await) {
        println!("{:>6}: valid={} {:?}", req.trajectory_id, resp.valid, resp.observation);
    }
    let resp = server.handle_one(&ToolRequest::action("alice", "<note>and eggs</note>")).await;
    println!(" alice: {:?}", resp.observation);

    server.handle_one(&ToolRequest::finish("alice")).await;
    let resp = server.handle_one(&ToolRequest::action("alice", "<note>fresh start</note>")).await;
    println!(" alice after finish: {:?}", resp.observation);
}
