//! Thread pool used for independent trials and Monte Carlo chunks.

use rayon::prelude::*;
use rayon::{ThreadPool, ThreadPoolBuilder};
use sparsedyn_core::ChunkExecutor;

/// Environment variable holding the worker count; unset or `0` means one
/// worker per available core.
pub const WORKERS_ENV: &str = "SPARSE_DYN_WORKERS";

pub fn workers_from_env() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .unwrap_or(0)
}

/// Runs chunks on a dedicated rayon pool. Results come back in index order,
/// so reductions over them do not depend on the worker count.
pub struct RayonExecutor {
    pool: ThreadPool,
}

impl RayonExecutor {
    pub fn new(workers: usize) -> Self {
        let pool = ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool builds");
        Self { pool }
    }

    pub fn from_env() -> Self {
        Self::new(workers_from_env())
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// Maps `job` over `0..count` in parallel, preserving order.
    pub fn map<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..count).into_par_iter().map(job).collect())
    }
}

impl ChunkExecutor for RayonExecutor {
    fn map_chunks<T, F>(&self, count: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.map(count, job)
    }
}
