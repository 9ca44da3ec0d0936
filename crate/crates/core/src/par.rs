//! Data-parallel kernels over flat `f64` slices.
//!
//! With the `parallel` feature the loops run on the rayon pool, otherwise
//! they are plain iterators. Reductions always sum fixed-size chunks and then
//! combine the partial sums left to right, so results are bitwise identical
//! between the two builds and independent of the thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Chunk length used by every reduction.
pub const CHUNK: usize = 4096;

#[cfg(feature = "parallel")]
const MIN_PAR_LEN: usize = 2 * CHUNK;

/// `out[i] = f(i)` for every index.
pub fn fill_indexed<F>(out: &mut [f64], f: F)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() >= MIN_PAR_LEN {
        out.par_iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
        return;
    }
    out.iter_mut().enumerate().for_each(|(i, v)| *v = f(i));
}

/// `(0..len).map(f)` collected into a vector.
pub fn collect_indexed<F>(len: usize, f: F) -> Vec<f64>
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if len >= MIN_PAR_LEN {
        return (0..len).into_par_iter().with_min_len(CHUNK).map(f).collect();
    }
    (0..len).map(f).collect()
}

/// Calls `f(r, row)` on consecutive rows of length `n`.
pub fn fill_rows<F>(out: &mut [f64], n: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if out.len() >= MIN_PAR_LEN {
        out.par_chunks_mut(n).enumerate().for_each(|(r, row)| f(r, row));
        return;
    }
    out.chunks_mut(n).enumerate().for_each(|(r, row)| f(r, row));
}

/// Sum of `f(i)` over `0..len` with the fixed chunked order.
pub fn sum_indexed<F>(len: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        let mut acc = 0.0;
        for i in lo..hi {
            acc += f(i);
        }
        acc
    };
    let nchunks = len.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    if len >= MIN_PAR_LEN {
        let partial: Vec<f64> = (0..nchunks).into_par_iter().map(chunk_sum).collect();
        return partial.into_iter().sum();
    }
    (0..nchunks).map(chunk_sum).sum()
}

/// Three sums at once, with the same fixed order as [`sum_indexed`].
pub fn sum3_indexed<F>(len: usize, f: F) -> (f64, f64, f64)
where
    F: Fn(usize) -> (f64, f64, f64) + Sync + Send,
{
    let chunk_sum = |c: usize| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(len);
        let mut acc = (0.0, 0.0, 0.0);
        for i in lo..hi {
            let (a, b, c) = f(i);
            acc.0 += a;
            acc.1 += b;
            acc.2 += c;
        }
        acc
    };
    let add = |a: (f64, f64, f64), b: (f64, f64, f64)| (a.0 + b.0, a.1 + b.1, a.2 + b.2);
    let nchunks = len.div_ceil(CHUNK);
    #[cfg(feature = "parallel")]
    if len >= MIN_PAR_LEN {
        let partial: Vec<(f64, f64, f64)> = (0..nchunks).into_par_iter().map(chunk_sum).collect();
        return partial.into_iter().fold((0.0, 0.0, 0.0), add);
    }
    (0..nchunks).map(chunk_sum).fold((0.0, 0.0, 0.0), add)
}

/// Minimum of `f(i)` with its index; `(f64::INFINITY, 0)` for an empty range.
pub fn min_indexed<F>(len: usize, f: F) -> (f64, usize)
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    let pick = |a: (f64, usize), b: (f64, usize)| if b.0 < a.0 { b } else { a };
    #[cfg(feature = "parallel")]
    if len >= MIN_PAR_LEN {
        return (0..len)
            .into_par_iter()
            .with_min_len(CHUNK)
            .map(|i| (f(i), i))
            .reduce(|| (f64::INFINITY, 0), |a, b| {
                // ties resolve to the lower index for determinism
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    b
                } else {
                    a
                }
            });
    }
    (0..len).map(|i| (f(i), i)).fold((f64::INFINITY, 0), pick)
}

/// Apply `f` to independent items, in parallel when enabled. Output order
/// follows input order.
pub fn map_items<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}
