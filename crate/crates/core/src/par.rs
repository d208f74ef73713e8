//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch onto rayon; without it (or
//! after [`set_parallel(false)`](set_parallel)) they run on the calling thread.
//! Every helper partitions work into independent items whose results are
//! written back by index, so the parallel and sequential paths produce
//! bit-identical output.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Environment variable that pins every reduction to a fixed order.
pub const DETERMINISTIC_ENV: &str = "MV_TEST_DETERMINISTIC";

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Runtime switch for the rayon path. Has no effect without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// True when `MV_TEST_DETERMINISTIC=1` is set.
pub fn deterministic_from_env() -> bool {
    std::env::var(DETERMINISTIC_ENV)
        .map(|v| v.trim() == "1")
        .unwrap_or(false)
}

/// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() && n > 1 {
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Calls `f(chunk_index, chunk)` over `chunk_len`-sized pieces of `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    if parallel_enabled() && data.len() > chunk_len {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(i, c)| f(i, c));
}

/// Runs both closures, concurrently when the rayon path is active.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return rayon::join(a, b);
    }
    (a(), b())
}

/// Sums equally shaped vectors.
///
/// With `fixed_order` the sum runs left to right over `parts`; otherwise the
/// parts are combined by a rayon tree reduction whose association may vary
/// between runs.
pub fn sum_vectors(parts: Vec<Vec<f64>>, fixed_order: bool) -> Vec<f64> {
    fn add_into(mut acc: Vec<f64>, other: Vec<f64>) -> Vec<f64> {
        for (a, b) in acc.iter_mut().zip(other) {
            *a += b;
        }
        acc
    }
    if parts.is_empty() {
        return Vec::new();
    }
    #[cfg(feature = "parallel")]
    if !fixed_order && parallel_enabled() && parts.len() > 2 {
        return parts
            .into_par_iter()
            .reduce_with(add_into)
            .unwrap_or_default();
    }
    let _ = fixed_order;
    let mut it = parts.into_iter();
    let first = it.next().unwrap_or_default();
    it.fold(first, add_into)
}
