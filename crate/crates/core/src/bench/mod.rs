//! Sync-vs-async scheduling benchmark.
//!
//! A [`LatencyModel`] samples a [`ScheduleTrace`] of per-turn generation and
//! tool latencies. The trace is either evaluated in closed form
//! ([`oracle_sync_time`], [`oracle_async_time`]) or replayed through the real
//! schedulers with sleeping stand-ins for the policy and the tool
//! ([`measure`]).

mod measure;
mod report;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use measure::{measure, MeasuredRun, Mode};
pub use report::{run_speedup_experiment, ExperimentConfig, SpeedupReport, SpeedupRow};

#[derive(Debug, Error, PartialEq)]
pub enum BenchError {
    #[error("invalid latency distribution: {0}")]
    Distribution(String),
    #[error("trace shape mismatch: {0}")]
    Shape(String),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("measured run failed: {0}")]
    Run(String),
}

/// Latency distribution in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Dist {
    Fixed { ms: f64 },
    Uniform { lo_ms: f64, hi_ms: f64 },
    LogNormal { median_ms: f64, sigma: f64 },
    /// `slow_ms` with probability `p_slow`, else `fast_ms`.
    Bimodal { fast_ms: f64, slow_ms: f64, p_slow: f64 },
}

impl Dist {
    pub fn validate(&self) -> Result<(), BenchError> {
        let ok = match *self {
            Dist::Fixed { ms } => ms >= 0.0,
            Dist::Uniform { lo_ms, hi_ms } => lo_ms >= 0.0 && hi_ms >= lo_ms,
            Dist::LogNormal { median_ms, sigma } => median_ms > 0.0 && sigma >= 0.0,
            Dist::Bimodal { fast_ms, slow_ms, p_slow } => {
                fast_ms >= 0.0 && slow_ms >= 0.0 && (0.0..=1.0).contains(&p_slow)
            }
        };
        if ok {
            Ok(())
        } else {
            Err(BenchError::Distribution(format!("{self:?}")))
        }
    }

    /// One sample, rounded to whole milliseconds.
    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        let x = match *self {
            Dist::Fixed { ms } => ms,
            Dist::Uniform { lo_ms, hi_ms } => Uniform::new_inclusive(lo_ms, hi_ms).sample(rng),
            Dist::LogNormal { median_ms, sigma } => {
                LogNormal::new(median_ms.ln(), sigma).expect("validated").sample(rng)
            }
            Dist::Bimodal { fast_ms, slow_ms, p_slow } => {
                if rand::Rng::gen_bool(rng, p_slow) {
                    slow_ms
                } else {
                    fast_ms
                }
            }
        };
        x.max(0.0).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyModel {
    pub gen: Dist,
    pub tool: Dist,
    pub seed: u64,
}

impl LatencyModel {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.gen.validate()?;
        self.tool.validate()
    }

    /// Samples `batch` trajectories of `turns` tool turns each. Samples are
    /// drawn trajectory by trajectory, generation before tool within a turn.
    pub fn sample_trace(&self, batch: usize, turns: usize) -> Result<ScheduleTrace, BenchError> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut gen = Vec::with_capacity(batch);
        let mut tool = Vec::with_capacity(batch);
        for _ in 0..batch {
            let (mut g, mut t) = (Vec::with_capacity(turns), Vec::with_capacity(turns));
            for _ in 0..turns {
                g.push(self.gen.sample(&mut rng));
                t.push(self.tool.sample(&mut rng));
            }
            gen.push(g);
            tool.push(t);
        }
        ScheduleTrace::new(gen, tool)
    }
}

/// Latencies in milliseconds: `gen[i][t]` then `tool[i][t]` for trajectory
/// `i`, turn `t`. Trajectory `i` runs `gen[i].len()` tool turns and then
/// answers without further delay.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleTrace {
    gen: Vec<Vec<u64>>,
    tool: Vec<Vec<u64>>,
}

impl ScheduleTrace {
    pub fn new(gen: Vec<Vec<u64>>, tool: Vec<Vec<u64>>) -> Result<Self, BenchError> {
        if gen.len() != tool.len() {
            return Err(BenchError::Shape(format!("{} generation rows, {} tool rows", gen.len(), tool.len())));
        }
        if let Some(i) = (0..gen.len()).find(|&i| gen[i].len() != tool[i].len()) {
            return Err(BenchError::Shape(format!("trajectory {i}: {} vs {} turns", gen[i].len(), tool[i].len())));
        }
        Ok(Self { gen, tool })
    }

    pub fn batch(&self) -> usize {
        self.gen.len()
    }

    pub fn turns(&self, i: usize) -> usize {
        self.gen[i].len()
    }

    pub fn max_turns(&self) -> usize {
        self.gen.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn gen(&self) -> &[Vec<u64>] {
        &self.gen
    }

    pub fn tool(&self) -> &[Vec<u64>] {
        &self.tool
    }

    /// Total latency of trajectory `i` in milliseconds.
    pub fn total_ms(&self, i: usize) -> u64 {
        self.gen[i].iter().sum::<u64>() + self.tool[i].iter().sum::<u64>()
    }
}

/// Lockstep wall clock in seconds: each turn waits for the slowest live
/// generation, then for the slowest live tool call.
pub fn oracle_sync_time(trace: &ScheduleTrace) -> f64 {
    let mut ms = 0u64;
    for t in 0..trace.max_turns() {
        let live = (0..trace.batch()).filter(|&i| trace.turns(i) > t);
        let (g, k) = live.fold((0, 0), |(g, k), i| (g.max(trace.gen[i][t]), k.max(trace.tool[i][t])));
        ms += g + k;
    }
    ms as f64 / 1e3
}

/// Independent-trajectory wall clock in seconds. With at least one slot per
/// trajectory this is the longest trajectory; otherwise trajectories start
/// in index order on whichever slot frees first.
pub fn oracle_async_time(trace: &ScheduleTrace, max_parallel: usize) -> f64 {
    let n = trace.batch();
    if n == 0 {
        return 0.0;
    }
    let slots = max_parallel.max(1);
    let ms = if slots >= n {
        (0..n).map(|i| trace.total_ms(i)).max().unwrap_or(0)
    } else {
        let mut free_at = vec![0u64; slots];
        for i in 0..n {
            let k = (0..slots).min_by_key(|&k| (free_at[k], k)).expect("at least one slot");
            free_at[k] += trace.total_ms(i);
        }
        free_at.into_iter().max().unwrap_or(0)
    };
    ms as f64 / 1e3
}
