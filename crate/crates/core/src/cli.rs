//! `toolrl` command line: `serve`, `rollout`, `bench` and `loss`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use crate::batch::{group_batches, loss_report, read_sidecar};
use crate::bench::{run_speedup_experiment, Dist};
use crate::config::{profile, AppConfig, PolicySpec, Schedule};
use crate::kernel::NormalizedExact;
use crate::rollout::{
    read_episodes, write_episodes, AnswerReward, LatencySchedule, Policy, RemotePolicy, RewardKind, Rollout,
    ScriptedPolicy, SqlExecutionMatcher, Task,
};
use crate::server::{http, HttpToolClient, LocalToolClient, ToolClient, ToolServer};
use crate::trajectory::{Tokenizer, ToyMergeTokenizer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "toolrl", version, about = "Multi-turn tool-use rollouts, tool server and loss kernel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Serve the configured tools over HTTP until interrupted.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        host: Option<String>,
        /// 0 picks a free port.
        #[arg(long)]
        port: Option<u16>,
    },
    /// Roll out every task in a prompts file and write an episode log.
    Rollout {
        #[command(flatten)]
        common: Common,
        /// JSON lines of `{id, prompt, gold?, extra?}`.
        #[arg(long, value_name = "PATH")]
        prompts: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        /// Task profile: math, search, sql or deepsearch.
        #[arg(long, value_name = "NAME")]
        profile: Option<String>,
        /// Scripted policy file, overriding the configured policy.
        #[arg(long, value_name = "PATH", conflicts_with = "policy_url")]
        script: Option<PathBuf>,
        /// Remote completion service, overriding the configured policy.
        #[arg(long, value_name = "URL")]
        policy_url: Option<String>,
        /// Remote tool server instead of an in-process one.
        #[arg(long, value_name = "URL")]
        server: Option<String>,
        /// Lockstep turns across the batch.
        #[arg(long = "sync", conflicts_with = "use_async")]
        use_sync: bool,
        /// One independent task per trajectory (default).
        #[arg(long = "async")]
        use_async: bool,
        #[arg(long, value_name = "N")]
        max_parallel: Option<usize>,
    },
    /// Compare lockstep and independent scheduling on simulated latencies.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Write the JSON report here.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
        /// Evaluate the closed-form schedule model only.
        #[arg(long)]
        oracle_only: bool,
        #[arg(long)]
        batch: Option<usize>,
        /// Comma-separated turn counts, one report row each.
        #[arg(long, value_delimiter = ',')]
        turns: Option<Vec<usize>>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Compute the masked policy objective for an episode log.
    Loss {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        episodes: PathBuf,
        /// JSON lines of `{trajectory_id, logp_new, logp_old?, logp_ref?}`.
        #[arg(long, value_name = "PATH")]
        logprobs: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failure(e)
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .try_init();
    let rt = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(rt) => rt,
        Err(e) => {
            eprintln!("error: cannot start runtime: {e}");
            return EXIT_FAILURE;
        }
    };
    match rt.block_on(dispatch(cli.command)) {
        Ok(()) => EXIT_OK,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e:#}");
            EXIT_FAILURE
        }
    }
}

fn load_config(common: &Common) -> Result<AppConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => AppConfig::load(p).map_err(usage)?,
        None => AppConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
        cfg.bench.model.seed = s;
    }
    Ok(cfg)
}

async fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Serve { common, host, port } => cmd_serve(load_config(&common)?, host, port).await,
        Command::Rollout {
            common,
            prompts,
            out,
            profile,
            script,
            policy_url,
            server,
            use_sync,
            use_async: _,
            max_parallel,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = profile {
                cfg.rollout.profile = Some(p);
            }
            if let Some(s) = script {
                cfg.rollout.policy = Some(PolicySpec::Scripted { script: s, gen_latency: None });
            }
            if let Some(url) = policy_url {
                cfg.rollout.policy = Some(PolicySpec::Remote { url, timeout_ms: 60_000, max_tokens: 2048 });
            }
            if server.is_some() {
                cfg.rollout.server_url = server;
            }
            if use_sync {
                cfg.rollout.schedule = Schedule::Sync;
            }
            if max_parallel.is_some() {
                cfg.rollout.max_parallel = max_parallel;
            }
            cfg.validate().map_err(usage)?;
            cmd_rollout(&cfg, &prompts, &out).await
        }
        Command::Bench { common, out, oracle_only, batch, turns, repeats } => {
            let mut cfg = load_config(&common)?;
            if oracle_only {
                cfg.bench.measure = false;
            }
            if let Some(b) = batch {
                cfg.bench.batch = b;
            }
            if let Some(t) = turns {
                cfg.bench.turns = t;
            }
            if let Some(r) = repeats {
                cfg.bench.repeats = r;
            }
            cfg.bench.validate().map_err(usage)?;
            cmd_bench(&cfg, out.as_deref()).await
        }
        Command::Loss { common, episodes, logprobs, out } => {
            cmd_loss(&load_config(&common)?, &episodes, &logprobs, out.as_deref())
        }
    }
}

async fn cmd_serve(cfg: AppConfig, host: Option<String>, port: Option<u16>) -> Result<(), CliError> {
    let registry = cfg.build_registry().map_err(usage)?;
    let server = Arc::new(ToolServer::new(registry, cfg.server.settings()));
    let host = host.unwrap_or(cfg.server.host.clone());
    let port = port.unwrap_or(cfg.server.port);
    let addr: SocketAddr = format!("{host}:{port}").parse().map_err(|e| usage(format!("bad address {host}:{port}: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("cannot bind {addr}"))?;
    let local = listener.local_addr().context("no local address")?;
    println!("listening on http://{local} (tools: {})", server.registry().tool_ids().join(", "));
    http::serve(server, listener, shutdown_signal()).await.context("server failed")?;
    eprintln!("server stopped");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

fn read_tasks(path: &Path) -> Result<Vec<Task>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read prompts file {}: {e}", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| usage(format!("{}: line {}: {e}", path.display(), i + 1)))
        })
        .collect()
}

fn latency_schedule(d: Option<Dist>) -> Result<LatencySchedule, CliError> {
    Ok(match d {
        None => LatencySchedule::None,
        Some(Dist::Fixed { ms }) => LatencySchedule::Fixed(Duration::from_secs_f64(ms.max(0.0) / 1e3)),
        Some(Dist::Uniform { lo_ms, hi_ms }) => LatencySchedule::Uniform {
            lo: Duration::from_secs_f64(lo_ms.max(0.0) / 1e3),
            hi: Duration::from_secs_f64(hi_ms.max(lo_ms).max(0.0) / 1e3),
        },
        Some(other) => return Err(usage(format!("policy latency supports fixed and uniform only, got {other:?}"))),
    })
}

async fn cmd_rollout(cfg: &AppConfig, prompts: &Path, out: &Path) -> Result<(), CliError> {
    let tasks = read_tasks(prompts)?;
    let tokenizer: Arc<dyn Tokenizer> = Arc::new(ToyMergeTokenizer::default());
    let policy: Arc<dyn Policy> = match &cfg.rollout.policy {
        None => return Err(usage("no policy configured; pass --script or --policy-url")),
        Some(PolicySpec::Scripted { script, gen_latency }) => {
            let id = format!("scripted:{}", script.file_name().unwrap_or_default().to_string_lossy());
            let p = ScriptedPolicy::from_jsonl(id, script, tokenizer.clone(), cfg.seed).map_err(usage)?;
            Arc::new(p.with_latency(latency_schedule(*gen_latency)?))
        }
        Some(PolicySpec::Remote { url, timeout_ms, max_tokens }) => {
            Arc::new(RemotePolicy::new(url.clone(), Duration::from_millis(*timeout_ms), *max_tokens).map_err(usage)?)
        }
    };

    let client: Arc<dyn ToolClient> = match &cfg.rollout.server_url {
        Some(url) => {
            let s = &cfg.server;
            let timeout = Duration::from_millis(s.per_call_timeout_ms + s.timeout_slack_ms + 5_000);
            Arc::new(HttpToolClient::new(url.clone(), timeout).map_err(usage)?)
        }
        None => {
            let registry = cfg.build_registry().map_err(usage)?;
            Arc::new(LocalToolClient::new(Arc::new(ToolServer::new(registry, cfg.server.settings()))))
        }
    };

    let kind = cfg.reward_kind().map_err(usage)?;
    let sql_profile = cfg.rollout.profile.as_deref() == Some("sql");
    let reward = match (&cfg.tools.sql, kind, sql_profile) {
        (Some(sql), RewardKind::Match, true) => {
            let m = SqlExecutionMatcher::new(&sql.fixture).map_err(usage)?;
            AnswerReward::with_matcher(kind, Arc::new(m))
        }
        _ => AnswerReward::with_matcher(kind, Arc::new(NormalizedExact)),
    };
    if let Some(p) = &cfg.rollout.profile {
        tracing::info!(profile = p, stop_tokens = ?profile(p).map_err(usage)?.stop_tokens, "rollout profile");
    }

    let limits = cfg.rollout_limits().map_err(usage)?;
    let rollout = Rollout::connect(client, tokenizer, Arc::new(reward), limits)
        .await
        .map_err(|e| CliError::Failure(anyhow::anyhow!(e)))?;
    let policies = [policy];
    let outcome = match cfg.rollout.schedule {
        Schedule::Sync => rollout.run_batch_sync(&policies, &tasks).await,
        Schedule::Async => {
            let slots = cfg.rollout.max_parallel.unwrap_or(tasks.len()).max(1);
            rollout.run_batch_async(&policies, &tasks, slots).await
        }
    }
    .map_err(|e| CliError::Failure(anyhow::anyhow!(e)))?;

    write_episodes(&outcome.records, out).map_err(|e| CliError::Failure(anyhow::anyhow!(e)))?;
    let n = outcome.records.len();
    let mean = outcome.records.iter().map(|r| r.reward).sum::<f64>() / n.max(1) as f64;
    eprintln!(
        "{n} episodes, mean reward {mean:.3}, wall clock {:.2} s -> {}",
        outcome.wall_clock.as_secs_f64(),
        out.display()
    );
    Ok(())
}

async fn cmd_bench(cfg: &AppConfig, out: Option<&Path>) -> Result<(), CliError> {
    let report = run_speedup_experiment(&cfg.bench).await.map_err(|e| CliError::Failure(anyhow::anyhow!(e)))?;
    print!("{}", report.to_markdown());
    if let Some(path) = out {
        let json = serde_json::to_string_pretty(&report).context("serializing report")?;
        std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_loss(cfg: &AppConfig, episodes: &Path, logprobs: &Path, out: Option<&Path>) -> Result<(), CliError> {
    for p in [episodes, logprobs] {
        if !p.is_file() {
            return Err(usage(format!("no such file: {}", p.display())));
        }
    }
    let records = read_episodes(episodes).map_err(|e| anyhow::anyhow!("{}: {e}", episodes.display()))?;
    let sidecars = read_sidecar(logprobs).map_err(|e| anyhow::anyhow!("{}: {e}", logprobs.display()))?;
    let batches = group_batches(&records, &sidecars).map_err(|e| anyhow::anyhow!(e))?;
    let report = loss_report(&batches, &cfg.loss).map_err(|e| anyhow::anyhow!(e))?;
    let json = serde_json::to_string_pretty(&report).context("serializing report")?;
    match out {
        Some(p) => std::fs::write(p, json).with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    Ok(())
}
