//! Switchable data parallelism.
//!
//! Every parallel section maps over an indexed collection and collects in
//! index order, and every reduction after it is sequential, so results are
//! bit-identical whether the section runs on the rayon pool or not.

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(cfg!(feature = "parallel"));

/// Enables or disables parallel sections at runtime; returns the previous
/// setting. Without the `parallel` feature this is a no-op that stays
/// sequential.
pub fn set_parallel(on: bool) -> bool {
    PARALLEL.swap(on && cfg!(feature = "parallel"), Ordering::SeqCst)
}

pub fn is_parallel() -> bool {
    PARALLEL.load(Ordering::Relaxed)
}

pub fn map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    items.iter().map(f).collect()
}

pub fn map_range<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if is_parallel() {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    (0..n).map(f).collect()
}

/// Runs `f` on each index and stops at the first error in index order.
pub fn try_map_range<R, E, F>(n: usize, f: F) -> Result<Vec<R>, E>
where
    R: Send,
    E: Send,
    F: Fn(usize) -> Result<R, E> + Sync + Send,
{
    map_range(n, f).into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_preserves_order_in_both_modes() {
        let items: Vec<u64> = (0..1000).collect();
        let prev = set_parallel(true);
        let a = map(&items, |x| x * x);
        set_parallel(false);
        let b = map(&items, |x| x * x);
        set_parallel(prev);
        assert_eq!(a, b);
        assert_eq!(a[999], 999 * 999);
    }
}
