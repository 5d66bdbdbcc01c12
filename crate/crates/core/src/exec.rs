//! Sequential or data-parallel execution of independent work items.
//!
//! Parallel execution is compiled in with the `parallel` feature (rayon).
//! Results are always returned in input order, and every work item derives
//! its randomness from its own index, so both modes produce identical output.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Exec {
    #[default]
    Sequential,
    /// Run on a dedicated pool of `jobs` threads; `0` uses rayon's global pool.
    Parallel { jobs: usize },
}

impl Exec {
    /// `--jobs N` convention: 1 (or 0 items of parallelism) is sequential.
    pub fn from_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Exec::Sequential
        } else {
            Exec::Parallel { jobs }
        }
    }

    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && matches!(self, Exec::Parallel { .. })
    }

    /// Map `f` over `items`, preserving order.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(usize, &T) -> R + Sync + Send,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel { jobs } => par_map(jobs, items, &f),
            _ => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(jobs: usize, items: &[T], f: &F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    let run = || {
        items
            .par_iter()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect::<Vec<R>>()
    };
    if jobs == 0 {
        return run();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(run),
        // Pool creation only fails on thread spawn errors; fall back to the caller's thread.
        Err(_) => items.iter().enumerate().map(|(i, t)| f(i, t)).collect(),
    }
}
