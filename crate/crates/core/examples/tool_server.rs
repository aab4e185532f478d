//! Serving tools over HTTP and calling them with the client.
//!
//! `cargo run --example tool_server`

use std::sync::Arc;
use std::time::{Duration, Instant};

use toolrl::plugins::{CalculatorPlugin, FinishPlugin, SleepPlugin};
use toolrl::server::{http, HttpToolClient, ServerSettings, ToolClient, ToolRegistry, ToolRequest, ToolServer};

#[tokio::main]
async fn main() {
    let registry = ToolRegistry::new()
        .with(CalculatorPlugin::default())
        .unwrap()
        .with(SleepPlugin::default())
        .unwrap()
        .with(FinishPlugin::default())
        .unwrap();
    let settings = ServerSettings { max_concurrent: 4, per_call_timeout_ms: 500, ..ServerSettings::default() };
    let server = Arc::new(ToolServer::new(registry, settings));
    let running = http::spawn(server.clone(), "127.0.0.1:0".parse().unwrap()).await.unwrap();
    println!("serving on {}", running.url());

    let client = HttpToolClient::new(running.url(), Duration::from_secs(10)).unwrap();
    for set in client.stop_sets().await.unwrap() {
        println!("  {:<10} stops on {:?}", set.tool_id, set.stop_strings);
    }

    let requests = vec![
        ToolRequest::action("t1", "Let me compute. <calculator>3947/7</calculator>"),
        ToolRequest::action("t2", "<sleep>200</sleep>"),
        ToolRequest::action("t3", "<sleep>5000</sleep>"),
        ToolRequest::action("t4", "I think the answer is 12."),
        ToolRequest::action("t5", "<answer>563.9</answer>"),
    ];
    let started = Instant::now();
    let responses = client.get_observations(requests.clone()).await.unwrap();
    for (req, r) in requests.iter().zip(&responses) {
        println!("{} valid={:<5} done={:<5} {:?}", req.trajectory_id, r.valid, r.done, r.observation);
    }
    // the slow sleep is cut off at the timeout, so the batch takes about 500 ms
    println!("batch round trip: {:?}", started.elapsed());
    println!("peak concurrent calls: {}", server.pool().peak_in_flight());
    running.shutdown().await.unwrap();
}
