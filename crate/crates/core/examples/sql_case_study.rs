//! A scripted SQL agent against the student/pet database.
//!
//! `cargo run --example sql_case_study`

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use toolrl::plugins::{FinishPlugin, SqlConfig, SqlPlugin};
use toolrl::rollout::{
    AnswerReward, RewardKind, Rollout, RolloutLimits, ScriptedPolicy, SqlExecutionMatcher, Task,
};
use toolrl::server::{LocalToolClient, ServerSettings, ToolRegistry, ToolServer};
use toolrl::trajectory::{Origin, Tokenizer, ToyMergeTokenizer};

#[tokio::main]
async fn main() {
    let fixtures = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let scratch = tempfile::tempdir().unwrap();
    let sql = SqlPlugin::new(SqlConfig {
        fixture: fixtures.join("pet_1.sql"),
        scratch_dir: scratch.path().to_path_buf(),
        default_turns: 5,
        row_cap: 50,
        query_timeout: Duration::from_secs(5),
    })
    .unwrap();
    let registry = ToolRegistry::new().with(sql).unwrap().with(FinishPlugin::default()).unwrap();
    let server = Arc::new(ToolServer::new(registry, ServerSettings::default()));

    let tok: Arc<dyn Tokenizer> = Arc::new(ToyMergeTokenizer::default());
    let policy =
        ScriptedPolicy::from_jsonl("case-study", &fixtures.join("sql_script.jsonl"), tok.clone(), 0).unwrap();
    let matcher = SqlExecutionMatcher::new(&fixtures.join("pet_1.sql")).unwrap();
    let rollout = Rollout::connect(
        Arc::new(LocalToolClient::new(server)),
        tok,
        Arc::new(AnswerReward::with_matcher(RewardKind::Match, Arc::new(matcher))),
        RolloutLimits { max_turns: 5, ..RolloutLimits::default() },
    )
    .await
    .unwrap();

    let task = Task::new(
        "pets-no-cat",
        "Database: student/pet. Question: What are the ids of the students who do not own cats as pets?",
    )
    .with_gold(
        "SELECT stuid FROM student EXCEPT SELECT T1.stuid FROM student AS T1 JOIN has_pet AS T2 \
         ON T1.stuid = T2.stuid JOIN pets AS T3 ON T3.petid = T2.petid WHERE T3.pettype = 'cat'",
    );
    let rec = rollout.run_trajectory(&policy, &task, "pets-no-cat#0").await;

    println!("{}\n", task.prompt);
    for seg in &rec.trajectory.segments {
        let who = if seg.origin == Origin::Action { "policy" } else { "tool" };
        println!("[{who}, {} tokens]\n{}\n", seg.len(), seg.text.trim());
    }
    println!("ended with {:?}, reward {}", rec.trajectory.termination_cause.unwrap(), rec.reward);
}
