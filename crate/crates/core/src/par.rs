// Shard-parallel helpers. Results are always returned in index order, so
// output does not depend on the thread count.

#[cfg(feature = "parallel")]
pub(crate) fn map_range<T, F>(n: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_range<T, F>(n: u64, f: F) -> Vec<T>
where
    F: Fn(u64) -> T,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
pub(crate) fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(usize, &A) -> T + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, a)| f(i, a)).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    F: Fn(usize, &A) -> T,
{
    items.iter().enumerate().map(|(i, a)| f(i, a)).collect()
}

/// Number of shards worth producing at once.
#[cfg(feature = "parallel")]
pub(crate) fn width() -> usize {
    rayon::current_num_threads().max(1)
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn width() -> usize {
    1
}

/// Bounds worker parallelism for the whole process. Call once, before any
/// parallel work.
#[cfg(feature = "parallel")]
pub fn configure_threads(n: usize) -> crate::Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| crate::Error::input(e.to_string()))
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_n: usize) -> crate::Result<()> {
    Ok(())
}
