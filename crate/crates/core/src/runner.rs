//! Pluggable fan-out for independent work items (sequences, trials, grid
//! cells). Results come back in index order, and every item derives its own
//! random stream, so the outcome is identical for any executor.

use alloc::vec::Vec;

/// Maps `0..n` through `f`, returning results in index order.
pub trait ParallelMap: Sync {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T>;
}

/// Single-threaded executor; the reference implementation.
#[derive(Clone, Copy, Debug, Default)]
pub struct SerialMap;

impl ParallelMap for SerialMap {
    fn map<T: Send>(&self, n: usize, f: &(dyn Fn(usize) -> T + Sync)) -> Vec<T> {
        (0..n).map(f).collect()
    }
}
