//! Scoped worker threads for the core's [`ParallelMap`] hook.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use tia_core::parallel::ParallelMap;

/// Environment variable setting the number of worker threads.
pub const THREADS_ENV: &str = "TIA_THREADS";

/// Runs work items on up to `threads` scoped threads. Items are claimed from a
/// shared counter and results are stored by index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadPool {
    threads: usize,
}

impl ThreadPool {
    pub fn new(threads: usize) -> Self {
        Self {
            threads: threads.max(1),
        }
    }

    /// `TIA_THREADS` when it is set to a positive integer, otherwise the
    /// available parallelism.
    pub fn from_env() -> Self {
        let available = std::thread::available_parallelism().map_or(1, |n| n.get());
        let cap = std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n > 0);
        Self::new(cap.unwrap_or(available))
    }

    pub fn threads(&self) -> usize {
        self.threads
    }
}

impl ParallelMap for ThreadPool {
    fn map<R: Send, F: Fn(usize) -> R + Sync>(&self, n: usize, f: F) -> Vec<R> {
        let workers = self.threads.min(n);
        if workers <= 1 {
            return (0..n).map(f).collect();
        }
        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<R>>> = (0..n).map(|_| Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    if i >= n {
                        break;
                    }
                    let r = f(i);
                    *slots[i].lock().expect("result slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| {
                m.into_inner()
                    .expect("result slot")
                    .expect("every index ran")
            })
            .collect()
    }
}
