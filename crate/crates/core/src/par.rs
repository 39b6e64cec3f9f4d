//! Data-parallel map over independent runs.
//!
//! With the `parallel` feature (default) runs are distributed by rayon;
//! without it they execute sequentially. Both paths return results in run
//! order, so outputs are identical either way.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n` in the configured execution mode.
pub fn map_runs<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_runs_parallel(n, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_runs_sequential(n, f)
    }
}

/// Sequential reference path.
pub fn map_runs_sequential<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_runs_parallel<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Configure the global worker pool. A no-op without the `parallel` feature.
pub fn init_threads(threads: Option<usize>) {
    #[cfg(feature = "parallel")]
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: u64| i * i + 1;
        assert_eq!(map_runs(50, f), map_runs_sequential(50, f));
    }
}
