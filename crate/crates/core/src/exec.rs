//! Trial fan-out for Monte-Carlo campaigns.
//!
//! With the `parallel` feature (default) the fan-out uses rayon; without it
//! everything runs sequentially. Results are identical either way because
//! every trial derives its randomness from the trial index alone, never from
//! shared state.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of trials in `0..trials` for which `f` returns true.
pub fn count_hits<F>(trials: u64, f: F) -> u64
where
    F: Fn(u64) -> bool + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..trials).into_par_iter().filter(|&i| f(i)).count() as u64
    }
    #[cfg(not(feature = "parallel"))]
    {
        count_hits_seq(trials, f)
    }
}

/// Sequential counterpart, always available (used by the benchmarks to
/// compare against the parallel path).
pub fn count_hits_seq<F>(trials: u64, f: F) -> u64
where
    F: Fn(u64) -> bool,
{
    (0..trials).filter(|&i| f(i)).count() as u64
}

/// Maps `f` over the trial indices, preserving order.
pub fn map_trials<T, F>(trials: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..trials).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_trials_seq(trials, f)
    }
}

pub fn map_trials_seq<T, F>(trials: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..trials).map(f).collect()
}
