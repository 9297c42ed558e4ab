//! Data-parallel helpers with a sequential fallback.
//!
//! Every fan-out in the crate goes through [`map`], which preserves input
//! order in its output. Reductions over the results are done by the caller
//! in index order, so results are bitwise identical whichever mode runs.

/// How to execute an embarrassingly parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    /// Uses rayon when the `parallel` feature is enabled, otherwise the
    /// sequential path.
    #[default]
    Parallel,
}

/// Maps `f` over `items` (with their index), returning results in input order.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    match exec {
        Exec::Sequential => items.iter().enumerate().map(|(i, x)| f(i, x)).collect(),
        Exec::Parallel => par_map(items, f),
    }
}

/// Like [`map`] over `0..n`.
pub fn map_range<R, F>(exec: Exec, n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    let idx: Vec<usize> = (0..n).collect();
    map(exec, &idx, |_, &i| f(i))
}

#[cfg(feature = "parallel")]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let xs: Vec<u64> = (0..1000).collect();
        let a = map(Exec::Sequential, &xs, |i, x| x * 3 + i as u64);
        let b = map(Exec::Parallel, &xs, |i, x| x * 3 + i as u64);
        assert_eq!(a, b);
        assert_eq!(a[10], 40);
    }
}
