//! Rayon-backed executor. Results are collected in index order and every
//! work item derives its own random stream, so outcomes are bitwise
//! identical to the serial executor for any thread count.

use hvrnn_core::runner::ParallelMap;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, Default)]
pub struct RayonMap;

impl ParallelMap for RayonMap {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Builds the global thread pool. Precedence: explicit flag, then the
/// HVRNN_THREADS environment variable, then the logical CPU count.
pub fn init_threads(flag: Option<usize>) -> usize {
    let n = flag
        .or_else(|| {
            std::env::var("HVRNN_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .filter(|n| *n > 0)
        .unwrap_or_else(num_threads_default);
    // Ignore the error if a pool already exists (tests may race).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    n
}

fn num_threads_default() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}
