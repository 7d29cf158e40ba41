//! Indexed map over replicates, sequential or on a dedicated rayon pool.
//!
//! Output order is the index order in both modes, so any reduction done over
//! the returned vector is independent of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How replicates are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    /// A pool of `workers` threads. Without the `parallel` feature this runs
    /// sequentially.
    Parallel { workers: usize },
}

impl Execution {
    /// `0` or `1` workers means sequential.
    pub fn with_workers(workers: usize) -> Self {
        if workers <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { workers }
        }
    }

    pub fn workers(&self) -> usize {
        match self {
            Execution::Sequential => 1,
            Execution::Parallel { workers } => *workers,
        }
    }
}

/// `(0..n).map(f)` with results in index order.
pub fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { workers } => match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
            Err(e) => {
                log::warn!("could not start {workers} worker threads ({e}); running sequentially");
                (0..n).map(f).collect()
            }
        },
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => (0..n).map(f).collect(),
    }
}
