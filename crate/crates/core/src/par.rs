//! Data-parallel helpers.
//!
//! With the `parallel` feature (default) these run on the rayon pool;
//! without it they degrade to plain sequential loops. Reductions always go
//! through fixed-size chunks combined in chunk order, so results are
//! bit-identical regardless of thread count or feature selection.

/// Rows per reduction chunk.
pub const CHUNK: usize = 2048;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Applies `f(chunk_index, chunk)` to consecutive `chunk_len`-sized pieces of
/// `data`.
pub fn for_each_chunk_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    data.par_chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(c, chunk)| f(c, chunk));
    #[cfg(not(feature = "parallel"))]
    data.chunks_mut(chunk_len)
        .enumerate()
        .for_each(|(c, chunk)| f(c, chunk));
}

/// Fallible variant of [`for_each_chunk_mut`]; the error from the lowest
/// failing chunk index is returned.
pub fn try_for_each_chunk_mut<T, E, F>(data: &mut [T], chunk_len: usize, f: F) -> Result<(), E>
where
    T: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<(), E> + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<(), E>> = data
        .par_chunks_mut(chunk_len)
        .enumerate()
        .map(|(c, chunk)| f(c, chunk))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<(), E>> = data
        .chunks_mut(chunk_len)
        .enumerate()
        .map(|(c, chunk)| f(c, chunk))
        .collect();
    results.into_iter().collect()
}

/// Like [`try_for_each_chunk_mut`] but collects one result per chunk, in
/// chunk order.
pub fn try_map_chunks_mut<T, R, E, F>(data: &mut [T], chunk_len: usize, f: F) -> Result<Vec<R>, E>
where
    T: Send,
    R: Send,
    E: Send,
    F: Fn(usize, &mut [T]) -> Result<R, E> + Send + Sync,
{
    let chunk_len = chunk_len.max(1);
    #[cfg(feature = "parallel")]
    let results: Vec<Result<R, E>> = data
        .par_chunks_mut(chunk_len)
        .enumerate()
        .map(|(c, chunk)| f(c, chunk))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<R, E>> = data
        .chunks_mut(chunk_len)
        .enumerate()
        .map(|(c, chunk)| f(c, chunk))
        .collect();
    results.into_iter().collect()
}

/// Maps every index in `0..n` in parallel and collects in index order.
pub fn map_indices<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Send + Sync,
{
    #[cfg(feature = "parallel")]
    return (0..n).into_par_iter().map(f).collect();
    #[cfg(not(feature = "parallel"))]
    return (0..n).map(f).collect();
}

/// Splits `0..n` into [`CHUNK`]-sized ranges, maps each range, and returns
/// the partial results in range order for a deterministic fold.
pub fn map_chunks<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(std::ops::Range<usize>) -> R + Send + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    map_indices(chunks, |c| f(c * CHUNK..((c + 1) * CHUNK).min(n)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunked_sum_matches_sequential_fold_of_partials() {
        let data: Vec<f64> = (0..10_000).map(|i| (i as f64).sin()).collect();
        let partials = map_chunks(data.len(), |r| data[r].iter().sum::<f64>());
        let total: f64 = partials.iter().sum();
        let again: f64 = map_chunks(data.len(), |r| data[r].iter().sum::<f64>()).iter().sum();
        assert_eq!(total.to_bits(), again.to_bits());
        assert_eq!(partials.len(), 5);
    }

    #[test]
    fn try_chunks_reports_first_error() {
        let mut v = vec![0u32; 100];
        let r = try_for_each_chunk_mut(&mut v, 10, |c, chunk| {
            chunk.iter_mut().for_each(|x| *x = c as u32);
            if c >= 3 {
                Err(c)
            } else {
                Ok(())
            }
        });
        assert_eq!(r, Err(3));
    }
}
