//! Data-parallel helpers. With the `parallel` feature the closures fan out on
//! the rayon pool; without it (or with `parallel == false`) they run in order.
//! Output order always matches input order, so results are identical in both
//! modes.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f` over `0..n`.
pub fn map_range<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Maps `f` over a slice.
pub fn map_slice<S, T, F>(items: &[S], parallel: bool, f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        return items.par_iter().map(f).collect();
    }
    let _ = parallel;
    items.iter().map(f).collect()
}

/// True when the crate was built with rayon support.
pub const fn available() -> bool {
    cfg!(feature = "parallel")
}
