//! Work distribution hook.
//!
//! The core never spawns threads. Callers that want parallelism pass an
//! implementation of [`ParallelMap`]; results always come back in index order
//! so reductions stay bit-reproducible regardless of worker count.

use alloc::vec::Vec;

pub trait ParallelMap: Sync {
    /// Evaluate `f(0..n)` and return the results in index order.
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R>;
}

/// Runs everything on the calling thread.
#[derive(Debug, Default, Clone, Copy)]
pub struct Sequential;

impl ParallelMap for Sequential {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        (0..n).map(f).collect()
    }
}
