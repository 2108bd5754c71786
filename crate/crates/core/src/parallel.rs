//! Worker-pool plumbing.

use rayon::prelude::*;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "HYPOCERT_THREADS";

/// Worker count: the explicit setting, else `HYPOCERT_THREADS`, else all cores.
pub fn resolve_threads(explicit: Option<usize>) -> usize {
    if let Some(n) = explicit.filter(|&n| n > 0) {
        return n;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Evaluate `f(i)` for `i in 0..n` on a pool of the given size, results in
/// index order. The first error (by index) wins.
pub fn map_indexed<T, E, F>(threads: Option<usize>, n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let workers = resolve_threads(threads);
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("failed to build worker pool");
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// Like [`map_indexed`] over chunks `[start, end)` of at most `chunk` indices.
pub fn map_chunks<T, E, F>(threads: Option<usize>, n: usize, chunk: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize, usize) -> Result<T, E> + Sync + Send,
{
    let chunk = chunk.max(1);
    let n_chunks = n.div_ceil(chunk);
    map_indexed(threads, n_chunks, |c| f(c * chunk, ((c + 1) * chunk).min(n)))
}
