//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) the maps run on the rayon pool;
//! without it they degrade to plain loops. Every helper produces outputs
//! indexed by the input position and all floating-point accumulation inside
//! a work item is sequential, so results are bit-identical regardless of
//! thread count or feature selection.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk size used when splitting per-observation work.
///
/// Fixed (not derived from the thread count) so that chunked partial sums
/// are grouped the same way on every run.
pub const CHUNK: usize = 64;

/// Map `f` over `0..n`, collecting results in index order.
pub fn map_indexed<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Split `0..n` into fixed-size chunks, map each chunk to a partial result,
/// and return the partials in chunk order. Callers fold the partials
/// sequentially, which keeps reductions deterministic.
pub fn map_chunks<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(std::ops::Range<usize>) -> U + Sync + Send,
{
    let ranges: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(CHUNK)
        .map(|lo| lo..(lo + CHUNK).min(n))
        .collect();
    #[cfg(feature = "parallel")]
    {
        ranges.into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        ranges.into_iter().map(f).collect()
    }
}

/// Chunked deterministic sum: partial sums per fixed chunk, folded in order.
pub fn sum_chunked<F>(n: usize, f: F) -> f64
where
    F: Fn(std::ops::Range<usize>) -> f64 + Sync + Send,
{
    map_chunks(n, f).into_iter().sum()
}

/// Map `f` over mutable, disjoint output chunks of `out`, where chunk `k`
/// covers `out[k*size..(k+1)*size]`.
pub fn for_each_chunk_mut<T, F>(out: &mut [T], size: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(size > 0);
    #[cfg(feature = "parallel")]
    {
        out.par_chunks_mut(size).enumerate().for_each(|(k, c)| f(k, c));
    }
    #[cfg(not(feature = "parallel"))]
    {
        out.chunks_mut(size).enumerate().for_each(|(k, c)| f(k, c));
    }
}

/// Size the global worker pool (no-op in sequential builds). Later calls
/// after the pool exists are ignored.
pub fn configure_threads(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = n;
    }
}
