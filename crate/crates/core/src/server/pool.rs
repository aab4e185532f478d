use std::future::Future;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::sync::Semaphore;

/// Bounded executor for tool calls.
///
/// At most `max_concurrent` futures run at once. Each one is dropped
/// (cancelled) if it has not finished `per_call_timeout` after it started.
pub struct WorkerPool {
    permits: Arc<Semaphore>,
    max_concurrent: usize,
    per_call_timeout: Duration,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimedOut;

impl WorkerPool {
    pub fn new(max_concurrent: usize, per_call_timeout: Duration) -> Self {
        let max_concurrent = max_concurrent.max(1);
        Self {
            permits: Arc::new(Semaphore::new(max_concurrent)),
            max_concurrent,
            per_call_timeout,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        }
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    pub fn per_call_timeout(&self) -> Duration {
        self.per_call_timeout
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::SeqCst)
    }

    /// Highest in-flight count observed since construction or the last reset.
    pub fn peak_in_flight(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn reset_peak(&self) {
        self.peak.store(self.in_flight(), Ordering::SeqCst);
    }

    /// Runs `fut` once a slot is free. Returns the output and the execution
    /// time, measured from when the slot was acquired.
    pub async fn run<F: Future>(&self, fut: F) -> (Result<F::Output, TimedOut>, Duration) {
        let _permit = self.permits.acquire().await.expect("pool semaphore is never closed");
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        let _slot = SlotGuard(&self.in_flight);
        let start = Instant::now();
        let out = tokio::time::timeout(self.per_call_timeout, fut).await.map_err(|_| TimedOut);
        (out, start.elapsed())
    }
}

struct SlotGuard<'a>(&'a AtomicUsize);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}
