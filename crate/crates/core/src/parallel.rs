//! Data-parallel map with a sequential fallback.
//!
//! Results always come back in input order, so callers that merge in index
//! order (gradient accumulation, evaluation records) produce bit-identical
//! output whether the `parallel` feature is on or off and regardless of
//! worker count. Both entry points stay exported so the benches can compare
//! them directly.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub fn map_ordered_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

#[cfg(feature = "parallel")]
pub fn map_ordered_par<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Maps over `items`, in parallel when the `parallel` feature is enabled.
pub fn map_ordered<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        map_ordered_par(items, f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        map_ordered_seq(items, f)
    }
}
