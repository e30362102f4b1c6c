//! Order-preserving parallel map over a fixed worker pool.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};

/// A pool of `count` workers. Results always come back in index order and
/// callers reduce them sequentially, so the worker count never changes a
/// result.
pub struct Workers {
    count: usize,
    pool: Option<ThreadPool>,
}

impl std::fmt::Debug for Workers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Workers").field("count", &self.count).finish()
    }
}

impl Workers {
    /// `count` is clamped to at least 1; a single worker runs inline.
    pub fn new(count: usize) -> Self {
        let count = count.max(1);
        let pool = (count > 1).then(|| {
            ThreadPoolBuilder::new()
                .num_threads(count)
                .build()
                .expect("failed to start worker threads")
        });
        Self { count, pool }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match &self.pool {
            None => (0..n).map(f).collect(),
            Some(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
