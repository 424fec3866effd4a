//! Replica fan-out over a bounded worker pool.

use anyhow::{Context, Result};
use rayon::prelude::*;

pub const WORKERS_ENV: &str = "RDMD_WORKERS";

/// Worker count: `RDMD_WORKERS` if set, else the available parallelism.
pub fn workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Random stream for replica `r` at ladder level `level`.
pub fn stream_id(level: usize, replica: u64) -> u64 {
    ((level as u64) << 32) | replica
}

/// Runs `f` for every replica index and returns the results in index order.
/// The output does not depend on the worker count.
pub fn run_replicas<T, F>(count: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers()).build().context("building worker pool")?;
    pool.install(|| (0..count).into_par_iter().map(|r| f(r).with_context(|| format!("replica {r}"))).collect())
}
