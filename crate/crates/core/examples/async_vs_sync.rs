//! Lockstep versus independent trajectory scheduling.
//!
//! Prints the closed-form schedule model for two latency profiles and then
//! replays a scaled-down workload through both real schedulers.
//!
//! `cargo run --release --example async_vs_sync`

use toolrl::bench::{measure, oracle_async_time, oracle_sync_time, Dist, LatencyModel, Mode};

#[tokio::main]
async fn main() {
    let uniform = LatencyModel {
        gen: Dist::Uniform { lo_ms: 200.0, hi_ms: 1000.0 },
        tool: Dist::Uniform { lo_ms: 100.0, hi_ms: 2000.0 },
        seed: 0,
    };
    let heavy_tail = LatencyModel {
        gen: Dist::Fixed { ms: 100.0 },
        tool: Dist::Bimodal { fast_ms: 100.0, slow_ms: 4000.0, p_slow: 0.1 },
        seed: 0,
    };
    println!("{:<12} {:>6} {:>9} {:>9} {:>8}", "latencies", "turns", "sync s", "async s", "speedup");
    for (name, model) in [("uniform", uniform), ("heavy tail", heavy_tail)] {
        for turns in [1, 3, 5] {
            let trace = model.sample_trace(16, turns).unwrap();
            let (s, a) = (oracle_sync_time(&trace), oracle_async_time(&trace, 16));
            println!("{name:<12} {turns:>6} {s:>9.2} {a:>9.2} {:>8.2}", s / a);
        }
    }

    // same shape, a tenth of the latency, run for real
    let small = LatencyModel {
        gen: Dist::Uniform { lo_ms: 20.0, hi_ms: 100.0 },
        tool: Dist::Bimodal { fast_ms: 10.0, slow_ms: 400.0, p_slow: 0.1 },
        seed: 1,
    };
    let trace = small.sample_trace(16, 5).unwrap();
    let sync = measure(&trace, Mode::Sync).await.unwrap();
    let asyn = measure(&trace, Mode::Async { max_parallel: 16 }).await.unwrap();
    println!(
        "\nmeasured: sync {:.3} s (model {:.3}), async {:.3} s (model {:.3}), speedup {:.2}",
        sync.wall_s,
        oracle_sync_time(&trace),
        asyn.wall_s,
        oracle_async_time(&trace, 16),
        sync.wall_s / asyn.wall_s
    );
    let limited = measure(&trace, Mode::Async { max_parallel: 4 }).await.unwrap();
    println!("async with 4 slots: {:.3} s (model {:.3})", limited.wall_s, oracle_async_time(&trace, 4));
}
