use serde::{Deserialize, Serialize};

use super::{measure, oracle_async_time, oracle_sync_time, BenchError, LatencyModel, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: LatencyModel,
    pub batch: usize,
    /// One report row per entry.
    pub turns: Vec<usize>,
    pub repeats: usize,
    /// Defaults to the batch size.
    #[serde(default)]
    pub max_parallel: Option<usize>,
    /// Run the real schedulers; when false only the oracles are evaluated.
    #[serde(default = "yes")]
    pub measure: bool,
}

fn yes() -> bool {
    true
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        self.model.validate()?;
        if self.batch == 0 || self.repeats == 0 || self.turns.is_empty() || self.max_parallel == Some(0) {
            return Err(BenchError::Config("batch, repeats, turns and max_parallel must be non-empty/positive".into()));
        }
        Ok(())
    }

    pub fn parallelism(&self) -> usize {
        self.max_parallel.unwrap_or(self.batch)
    }
}

/// Mean times over the repeats of one turn count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub turns: usize,
    pub sync_s: f64,
    pub async_s: f64,
    pub speedup: f64,
    pub oracle_sync_s: f64,
    pub oracle_async_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub config: ExperimentConfig,
    pub rows: Vec<SpeedupRow>,
}

impl SpeedupReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Turns | Sync (s) | Async (s) | Speed Up | Oracle sync (s) | Oracle async (s) |\n");
        s.push_str("|---|---|---|---|---|---|\n");
        for r in &self.rows {
            s.push_str(&format!(
                "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} |\n",
                r.turns, r.sync_s, r.async_s, r.speedup, r.oracle_sync_s, r.oracle_async_s
            ));
        }
        s
    }
}

/// Repeat `r` of every row samples its trace with seed `model.seed + r`.
pub async fn run_speedup_experiment(cfg: &ExperimentConfig) -> Result<SpeedupReport, BenchError> {
    cfg.validate()?;
    let slots = cfg.parallelism();
    let mut rows = Vec::with_capacity(cfg.turns.len());
    for &turns in &cfg.turns {
        let (mut sync_s, mut async_s, mut o_sync, mut o_async) = (0.0, 0.0, 0.0, 0.0);
        for r in 0..cfg.repeats {
            let model = LatencyModel { seed: cfg.model.seed.wrapping_add(r as u64), ..cfg.model };
            let trace = model.sample_trace(cfg.batch, turns)?;
            let (os, oa) = (oracle_sync_time(&trace), oracle_async_time(&trace, slots));
            o_sync += os;
            o_async += oa;
            if cfg.measure {
                sync_s += measure(&trace, Mode::Sync).await?.wall_s;
                async_s += measure(&trace, Mode::Async { max_parallel: slots }).await?.wall_s;
            } else {
                sync_s += os;
                async_s += oa;
            }
        }
        let k = cfg.repeats as f64;
        rows.push(SpeedupRow {
            turns,
            sync_s: sync_s / k,
            async_s: async_s / k,
            speedup: if async_s > 0.0 { sync_s / async_s } else { 1.0 },
            oracle_sync_s: o_sync / k,
            oracle_async_s: o_async / k,
        });
    }
    Ok(SpeedupReport { config: cfg.clone(), rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::Dist;

    fn cfg(gen: Dist, tool: Dist, measure: bool) -> ExperimentConfig {
        ExperimentConfig {
            model: LatencyModel { gen, tool, seed: 0 },
            batch: 4,
            turns: vec![2],
            repeats: 1,
            max_parallel: None,
            measure,
        }
    }

    #[tokio::test]
    async fn homogeneous_latencies_give_no_speedup() {
        let c = cfg(Dist::Fixed { ms: 60.0 }, Dist::Fixed { ms: 80.0 }, true);
        let rep = run_speedup_experiment(&c).await.unwrap();
        let row = &rep.rows[0];
        assert_eq!(row.oracle_sync_s, row.oracle_async_s);
        assert!((row.speedup - 1.0).abs() <= 0.05, "speedup {}", row.speedup);
    }

    #[tokio::test]
    async fn heavy_tail_oracle_speedup() {
        let c = ExperimentConfig {
            batch: 16,
            turns: vec![5],
            ..cfg(
                Dist::Uniform { lo_ms: 200.0, hi_ms: 1000.0 },
                Dist::Bimodal { fast_ms: 100.0, slow_ms: 4000.0, p_slow: 0.1 },
                false,
            )
        };
        let rep = run_speedup_experiment(&c).await.unwrap();
        assert!(rep.rows[0].speedup > 1.5, "{}", rep.to_markdown());
    }

    #[test]
    fn markdown_and_json() {
        let rep = SpeedupReport {
            config: cfg(Dist::Fixed { ms: 1.0 }, Dist::Fixed { ms: 1.0 }, false),
            rows: vec![SpeedupRow {
                turns: 5,
                sync_s: 2.0,
                async_s: 1.0,
                speedup: 2.0,
                oracle_sync_s: 2.0,
                oracle_async_s: 1.0,
            }],
        };
        assert!(rep.to_markdown().contains("| 5 | 2.00 | 1.00 | 2.00 |"));
        let back: SpeedupReport = serde_json::from_str(&serde_json::to_string(&rep).unwrap()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn rejects_empty_experiments() {
        let mut c = cfg(Dist::Fixed { ms: 1.0 }, Dist::Fixed { ms: 1.0 }, false);
        c.turns.clear();
        assert!(c.validate().is_err());
    }
}
