//! Deterministic data-parallel primitives.
//!
//! Reductions are computed over fixed-size chunks whose partial results are
//! combined in index order, so every sum is bit-identical regardless of the
//! thread count and of whether the `parallel` feature is enabled. Stencil
//! sweeps write disjoint output cells and are embarrassingly parallel.
//!
//! The `*_seq` variants are always compiled; the public entry points dispatch
//! to rayon when the `parallel` feature is on. Benchmarks compare the two.

/// Chunk length for deterministic reductions and parallel fills.
pub const CHUNK: usize = 4096;

/// Fill `out[i] = f(i)` for every index.
pub fn fill<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let base = ci * CHUNK;
            for (j, v) in chunk.iter_mut().enumerate() {
                *v = f(base + j);
            }
        });
    }
    #[cfg(not(feature = "parallel"))]
    fill_seq(out, f);
}

/// Sequential reference implementation of [`fill`].
pub fn fill_seq<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64,
{
    for (i, v) in out.iter_mut().enumerate() {
        *v = f(i);
    }
}

/// Deterministic chunked sum of `f(i)` over `0..n`.
pub fn sum_indexed<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let n_chunks = n.div_ceil(CHUNK);
        let partials: Vec<f64> = (0..n_chunks)
            .into_par_iter()
            .map(|ci| {
                let lo = ci * CHUNK;
                let hi = (lo + CHUNK).min(n);
                let mut acc = 0.0;
                for i in lo..hi {
                    acc += f(i);
                }
                acc
            })
            .collect();
        partials.iter().sum()
    }
    #[cfg(not(feature = "parallel"))]
    sum_indexed_seq(n, f)
}

/// Sequential reference implementation of [`sum_indexed`] (same chunking, so
/// the result is bit-identical to the parallel path).
pub fn sum_indexed_seq<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64,
{
    let n_chunks = n.div_ceil(CHUNK);
    let mut total = 0.0;
    for ci in 0..n_chunks {
        let lo = ci * CHUNK;
        let hi = (lo + CHUNK).min(n);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        total += acc;
    }
    total
}

/// Split `out` into chunks of `block` elements and run `body(chunk_index,
/// chunk)` on each; chunks are disjoint, so the parallel and sequential paths
/// write identical bytes.
pub fn fill_blocks<F>(out: &mut [f64], block: usize, body: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let block = block.max(1);
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        out.par_chunks_mut(block).enumerate().for_each(|(ci, chunk)| body(ci, chunk));
    }
    #[cfg(not(feature = "parallel"))]
    fill_blocks_seq(out, block, body);
}

/// Sequential reference implementation of [`fill_blocks`].
pub fn fill_blocks_seq<F>(out: &mut [f64], block: usize, body: F)
where
    F: Fn(usize, &mut [f64]),
{
    for (ci, chunk) in out.chunks_mut(block.max(1)).enumerate() {
        body(ci, chunk);
    }
}

/// Deterministic sum of a slice.
pub fn sum(xs: &[f64]) -> f64 {
    sum_indexed(xs.len(), |i| xs[i])
}

/// Deterministic dot product.
pub fn dot(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len(), "dot: length mismatch");
    sum_indexed(xs.len(), |i| xs[i] * ys[i])
}
