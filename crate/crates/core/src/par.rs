//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) these dispatch to rayon; without it
//! they run in a plain loop. Results are always gathered in index order and
//! no floating-point reduction is split across threads, so outputs are
//! bitwise identical in both modes and for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// `(0..n).map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_range<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

/// `items.iter().map(f).collect()`, possibly in parallel.
#[cfg(feature = "parallel")]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Runs `f` on a dedicated pool of `workers` threads (sequentially when the
/// `parallel` feature is off). `workers == 0` means the rayon default.
#[cfg(feature = "parallel")]
pub fn with_workers<R, F>(workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R, F>(_workers: usize, f: F) -> R
where
    R: Send,
    F: FnOnce() -> R + Send,
{
    f()
}

pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
