//! Worker-count control. `BRIDGE_THREADS` caps the pool size; results never
//! depend on it.

use rayon::ThreadPool;

pub const THREADS_ENV: &str = "BRIDGE_THREADS";

pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn pool(threads: Option<usize>) -> ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build().expect("failed to build worker pool")
}

/// Runs `f` on a pool with exactly `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    pool(Some(threads.max(1))).install(f)
}

/// Runs `f` on a pool sized from `BRIDGE_THREADS` (rayon's default if unset).
pub fn with_env_threads<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    pool(threads_from_env()).install(f)
}
