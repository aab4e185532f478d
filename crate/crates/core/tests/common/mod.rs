//! Test-side oracles and fixtures shared by the integration tests.
//!
//! The oracles are written from the formulas directly and share no code
//! with the library.

#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toolrl::kernel::{GroupBatch, TokenRecord};
use toolrl::plugins::{CalculatorPlugin, FinishPlugin, SleepPlugin, SqlConfig, SqlPlugin};
use toolrl::server::{ServerSettings, ToolRegistry, ToolServer};
use toolrl::trajectory::TokenId;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn test_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- kernel

/// `(R_i - mean) / std` with the population standard deviation; zeros when
/// the spread is not above `floor`.
pub fn oracle_advantages(rewards: &[f64], floor: f64) -> Vec<f64> {
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / g;
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / std.max(floor)).collect()
}

/// The masked clipped objective, term by term.
pub fn oracle_objective(batch: &GroupBatch, adv: &[f64], eps: f64, beta: f64, only_actions: bool) -> f64 {
    let g = batch.trajectories.len() as f64;
    let mut total = 0.0;
    for (traj, &a) in batch.trajectories.iter().zip(adv) {
        let counted: Vec<&TokenRecord> = traj.iter().filter(|r| r.action || !only_actions).collect();
        if counted.is_empty() {
            continue;
        }
        let n = counted.len() as f64;
        let mut s = 0.0;
        let mut kl = 0.0;
        for r in counted {
            let ratio = (r.logp_new - r.logp_old).exp();
            let clipped = ratio.clamp(1.0 - eps, 1.0 + eps);
            s += (ratio * a).min(clipped * a);
            if let Some(lr) = r.logp_ref {
                let d = lr - r.logp_new;
                kl += d.exp() - d - 1.0;
            }
        }
        total += s / n - beta * kl / n;
    }
    total / g
}

/// Central difference of `f` at `x` along coordinate `k`.
pub fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], k: usize, h: f64) -> f64 {
    let mut up = x.to_vec();
    let mut down = x.to_vec();
    up[k] += h;
    down[k] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

pub fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + 1e-12
}

/// Random group of `2..=max_g` trajectories. Each trajectory alternates
/// action and observation runs starting with an action; `single_turn`
/// yields one action run per trajectory.
pub fn random_group(rng: &mut ChaCha8Rng, max_g: usize, single_turn: bool, with_ref: bool) -> GroupBatch {
    let g = rng.gen_range(2..=max_g);
    let mut trajectories = Vec::with_capacity(g);
    for _ in 0..g {
        let segs = if single_turn { 1 } else { 2 * rng.gen_range(0..4) + 1 };
        let mut recs = Vec::new();
        for s in 0..segs {
            let action = s % 2 == 0;
            for _ in 0..rng.gen_range(1..12) {
                let old: f64 = -rng.gen_range(0.0..6.0);
                let new: f64 = (old + rng.gen_range(-0.5..0.5)).min(0.0);
                recs.push(TokenRecord {
                    token: TokenId(rng.gen_range(0..300)),
                    logp_new: new,
                    logp_old: old,
                    logp_ref: with_ref.then(|| (old + rng.gen_range(-0.3..0.3)).min(0.0)),
                    action,
                });
            }
        }
        trajectories.push(recs);
    }
    let rewards = (0..g).map(|_| [-1.25, -1.0, 0.0, 1.0, 1.1][rng.gen_range(0..5)]).collect();
    GroupBatch { group_id: "g".into(), trajectories, rewards }
}

// ---------------------------------------------------------------- servers

pub fn sql_plugin(scratch: &std::path::Path) -> SqlPlugin {
    SqlPlugin::new(SqlConfig {
        fixture: fixture("pet_1.sql"),
        scratch_dir: scratch.to_path_buf(),
        default_turns: 5,
        row_cap: 50,
        query_timeout: Duration::from_secs(5),
    })
    .expect("fixture present")
}

pub fn basic_server(settings: ServerSettings) -> Arc<ToolServer> {
    let reg = ToolRegistry::new()
        .with(CalculatorPlugin::default())
        .unwrap()
        .with(SleepPlugin::default())
        .unwrap()
        .with(FinishPlugin::default())
        .unwrap();
    Arc::new(ToolServer::new(reg, settings))
}

pub fn sql_server(scratch: &std::path::Path, settings: ServerSettings) -> Arc<ToolServer> {
    let reg = ToolRegistry::new().with(sql_plugin(scratch)).unwrap().with(FinishPlugin::default()).unwrap();
    Arc::new(ToolServer::new(reg, settings))
}

// ---------------------------------------------------------------- schedules

/// Lockstep makespan in ms, summed turn by turn over the live trajectories.
pub fn oracle_sync_ms(gen: &[Vec<u64>], tool: &[Vec<u64>]) -> u64 {
    let turns = gen.iter().map(Vec::len).max().unwrap_or(0);
    (0..turns)
        .map(|t| {
            let live: Vec<usize> = (0..gen.len()).filter(|&i| gen[i].len() > t).collect();
            live.iter().map(|&i| gen[i][t]).max().unwrap_or(0) + live.iter().map(|&i| tool[i][t]).max().unwrap_or(0)
        })
        .sum()
}

/// Fully parallel makespan in ms: the longest trajectory.
pub fn oracle_async_ms(gen: &[Vec<u64>], tool: &[Vec<u64>]) -> u64 {
    (0..gen.len()).map(|i| gen[i].iter().sum::<u64>() + tool[i].iter().sum::<u64>()).max().unwrap_or(0)
}
