//! Index-parallel map used by every ensemble loop.
//!
//! Work items are independent and results are collected in index order, so
//! the output never depends on how many workers ran it. With the `parallel`
//! feature off, [`Execution::Parallel`] silently runs sequentially.

/// How an ensemble loop is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

/// Maps `f` over `0..n` with a per-worker scratch value built by `init`.
pub fn map_indexed<S, T, I, F>(exec: Execution, n: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => map_sequential(n, init, f),
        Execution::Parallel => map_parallel(n, init, f),
    }
}

fn map_sequential<S, T, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> T,
{
    let mut scratch = init();
    (0..n).map(|i| f(&mut scratch, i)).collect()
}

#[cfg(feature = "parallel")]
fn map_parallel<S, T, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    T: Send,
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map_init(init, f).collect()
}

#[cfg(not(feature = "parallel"))]
fn map_parallel<S, T, I, F>(n: usize, init: I, f: F) -> Vec<T>
where
    I: Fn() -> S,
    F: Fn(&mut S, usize) -> T,
{
    map_sequential(n, init, f)
}

/// Runs `f` on a pool of `workers` threads (or inline when the `parallel`
/// feature is disabled). `workers == 0` uses the global pool.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        if workers == 0 {
            return f();
        }
        match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = workers;
        f()
    }
}
