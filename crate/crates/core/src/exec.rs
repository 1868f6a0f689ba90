//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the parallel paths run on the rayon
//! global pool. Without it, [`Execution::Parallel`] silently degrades to the
//! sequential path, so callers never need their own `cfg` gates. Every helper
//! returns results in input order regardless of the worker count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

/// Maps `f` over `0..n`, preserving index order in the output.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        _ => (0..n).map(f).collect(),
    }
}

/// Fallible variant of [`map_range`]. On failure the error for the lowest
/// failing index is returned, independent of scheduling.
pub fn try_map_range<T, E, F>(exec: Execution, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    map_range(exec, n, f).into_iter().collect()
}

/// Minimum of `f(i)` over `0..n` under a total order `key`; ties cannot
/// occur if `key` is total, so the result is schedule independent.
pub fn min_by<T, F, G>(exec: Execution, n: usize, f: F, key: G) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> Option<T> + Sync + Send,
    G: Fn(&T, &T) -> std::cmp::Ordering + Sync + Send,
{
    let pick = |a: Option<T>, b: Option<T>| match (a, b) {
        (Some(a), Some(b)) => {
            if key(&b, &a) == std::cmp::Ordering::Less {
                Some(b)
            } else {
                Some(a)
            }
        }
        (a, None) => a,
        (None, b) => b,
    };
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..n).into_par_iter().map(&f).reduce(|| None, pick),
        _ => (0..n).map(&f).fold(None, pick),
    }
}
