//! Two-hop question answering over a small BM25-indexed corpus.
//!
//! `cargo run --example search_agent`

use std::path::PathBuf;
use std::sync::Arc;

use toolrl::plugins::{Bm25Params, FinishPlugin, SearchIndex, SearchPlugin};
use toolrl::rollout::{AnswerReward, RewardKind, Rollout, RolloutLimits, ScriptedPolicy, Task};
use toolrl::server::{LocalToolClient, ServerSettings, ToolRegistry, ToolServer};
use toolrl::trajectory::{Tokenizer, ToyMergeTokenizer};

#[tokio::main]
async fn main() {
    let corpus = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/corpus.jsonl");
    let index = Arc::new(SearchIndex::from_jsonl(&corpus, Bm25Params::default()).unwrap());
    println!("indexed {} documents\n", index.len());
    let registry = ToolRegistry::new()
        .with(SearchPlugin::new(index, 2, 160))
        .unwrap()
        .with(FinishPlugin::default())
        .unwrap();
    let server = Arc::new(ToolServer::new(registry, ServerSettings::default()));

    let tok: Arc<dyn Tokenizer> = Arc::new(ToyMergeTokenizer::default());
    let prompt = "What was the birth name of Nadeem Siddique's favorite boxer?";
    let policy = ScriptedPolicy::new("search", tok.clone(), 0).with_script(
        prompt,
        [
            "I should find out who the favorite boxer is.\n<search>Nadeem Siddique favorite boxer</search>",
            "It is Sugar Ray Robinson. Now his birth name.\n<search>Sugar Ray Robinson born</search>",
            "<answer>Walker Smith Jr.</answer>",
        ],
    );
    let rollout = Rollout::connect(
        Arc::new(LocalToolClient::new(server)),
        tok,
        Arc::new(AnswerReward::new(RewardKind::Deepsearch)),
        RolloutLimits::default(),
    )
    .await
    .unwrap();
    let task = Task::new("boxer", prompt).with_gold("Walker Smith Jr.");
    let rec = rollout.run_trajectory(&policy, &task, "boxer#0").await;

    println!("{prompt}{}", rec.trajectory.text());
    println!("\n{} tool turns, reward {} {:?}", rec.trajectory.turn_count, rec.reward, rec.reward_breakdown);
}
