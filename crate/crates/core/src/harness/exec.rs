//! Trial scheduling. Trials are independent; results always come back in
//! trial order regardless of how they were executed.

use crate::error::{Error, Result};

/// Environment variable that sets the worker-pool size.
pub const WORKERS_ENV: &str = "RBDRIS_WORKERS";

/// Reads [`WORKERS_ENV`]. `Ok(None)` when unset or empty.
pub fn workers_from_env() -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(s) if s.trim().is_empty() => Ok(None),
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::config(
                WORKERS_ENV,
                format!("expected a positive integer, got \"{s}\""),
            )),
        },
        Err(_) => Ok(None),
    }
}

pub fn map_trials_sequential<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    F: Fn(usize) -> Result<T>,
{
    (0..n).map(f).collect()
}

/// Runs `f(0..n)` on a rayon pool with `workers` threads (the global pool
/// when `None`).
#[cfg(feature = "parallel")]
pub fn map_trials_parallel<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    use rayon::prelude::*;
    let run = || (0..n).into_par_iter().map(&f).collect::<Result<Vec<_>>>();
    match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// Parallel when built with the `parallel` feature, sequential otherwise.
pub fn map_trials<T, F>(n: usize, workers: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if workers == Some(1) {
            return map_trials_sequential(n, f);
        }
        map_trials_parallel(n, workers, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        map_trials_sequential(n, f)
    }
}
