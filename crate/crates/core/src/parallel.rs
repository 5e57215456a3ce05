//! Worker-pool sizing and deterministic parallel reduction.
//!
//! `DML_THREADS` caps worker parallelism; the default is the logical core
//! count. Reductions always use fixed chunk boundaries and combine partial
//! results in chunk order, so outputs are bit-identical for any thread count.

use std::sync::OnceLock;

use rayon::prelude::*;

static POOL_INIT: OnceLock<usize> = OnceLock::new();

/// Thread cap from `DML_THREADS`, falling back to the logical core count.
pub fn configured_threads() -> usize {
    std::env::var("DML_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n >= 1)
        .unwrap_or_else(num_threads)
}

fn num_threads() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

/// Install the global worker pool once per process. Later calls are no-ops.
pub fn init_pool() -> usize {
    *POOL_INIT.get_or_init(|| {
        let threads = configured_threads();
        // Ignore the error if some other component already built the pool.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
        threads
    })
}

/// Map items in fixed-size chunks and fold the per-chunk results in chunk
/// order. The chunk size is independent of the thread count, which keeps
/// floating-point reductions deterministic.
pub fn chunked_map_reduce<T, A, M, F>(items: &[T], chunk_size: usize, map: M, mut fold: F, init: A) -> A
where
    T: Sync,
    A: Send,
    M: Fn(&[T]) -> A + Sync,
    F: FnMut(A, A) -> A,
{
    init_pool();
    let partials: Vec<A> = items
        .par_chunks(chunk_size.max(1))
        .map(|chunk| map(chunk))
        .collect();
    let mut acc = init;
    for p in partials {
        acc = fold(acc, p);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_reduce_is_order_stable() {
        let items: Vec<f64> = (0..1000).map(|i| (i as f64) * 0.1).collect();
        let seq: f64 = items.iter().sum();
        let par = chunked_map_reduce(
            &items,
            64,
            |chunk| chunk.iter().sum::<f64>(),
            |a, b| a + b,
            0.0,
        );
        // identical chunking implies identical rounding
        let expected = items.chunks(64).map(|c| c.iter().sum::<f64>()).fold(0.0, |a, b| a + b);
        assert_eq!(par, expected);
        assert!((par - seq).abs() < 1e-9);
    }
}
