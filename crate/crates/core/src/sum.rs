//! Order-independent floating point reductions.
//!
//! Parallel reductions split work into fixed-size chunks, reduce each chunk
//! sequentially and combine chunk results pairwise, so the result does not
//! depend on the number of worker threads.

use rayon::prelude::*;

/// Fixed chunk length for parallel reductions.
pub const CHUNK: usize = 4096;

/// Pairwise (cascade) summation.
pub fn pairwise(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    pairwise(&values[..mid]) + pairwise(&values[mid..])
}

/// `sum_i f(i)` for `i in 0..n`, deterministic across thread counts.
pub fn par_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    let partial: Vec<f64> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n);
            (lo..hi).map(&f).sum::<f64>()
        })
        .collect();
    pairwise(&partial)
}

/// Dot product with the same chunking as [`par_sum`].
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    par_sum(a.len(), |i| a[i] * b[i])
}

/// Maximum of `f(i)` over `0..n` (NaN-free inputs assumed).
pub fn par_max<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(&f)
        .reduce(|| f64::NEG_INFINITY, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_matches_exact_integers() {
        let v: Vec<f64> = (1..=10_000).map(|k| k as f64).collect();
        assert_eq!(pairwise(&v), 50_005_000.0);
    }

    #[test]
    fn par_sum_is_thread_count_independent() {
        let f = |i: usize| ((i as f64) * 0.37).sin() / (1.0 + i as f64);
        let n = 100_003;
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| par_sum(n, f));
        let b = four.install(|| par_sum(n, f));
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
