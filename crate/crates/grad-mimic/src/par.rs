//! Order-preserving map that fans out with rayon when the `parallel` feature
//! is enabled and falls back to a plain loop otherwise.
//!
//! Only *maps* are parallelised; every reduction in this crate runs
//! sequentially in ascending index order, so results are bit-identical with
//! either backend. `map_serial` is always available for benchmarking the
//! sequential path against the parallel one.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps `f` over `items`, preserving input order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    map_serial(items, f)
}

/// Sequential equivalent of [`map`], kept available under every feature set.
pub fn map_serial<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

/// Maps `f` over `0..count`, preserving index order in the output.
#[cfg(feature = "parallel")]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Maps `f` over `0..count`, preserving index order in the output.
#[cfg(not(feature = "parallel"))]
pub fn map_range<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    map_range_serial(count, f)
}

/// Sequential equivalent of [`map_range`].
pub fn map_range_serial<U, F>(count: usize, f: F) -> Vec<U>
where
    F: Fn(usize) -> U,
{
    (0..count).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order() {
        let items: Vec<usize> = (0..1000).collect();
        let doubled = map(&items, |&x| 2 * x);
        assert_eq!(doubled, map_serial(&items, |&x| 2 * x));
    }

    #[test]
    fn map_range_matches_serial() {
        assert_eq!(map_range(257, |i| i * i), map_range_serial(257, |i| i * i));
    }
}
