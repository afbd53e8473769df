//! Worker pools for the per-particle parallel loops.
//!
//! Every parallel map in this crate writes each output slot from exactly one
//! task and reduces in fixed index order, so results do not depend on the
//! worker count.

use rayon::prelude::*;

/// Number of worker threads. `0` means "use all available cores".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Workers(pub usize);

impl Workers {
    pub fn single() -> Self {
        Workers(1)
    }

    /// Runs `f` inside a dedicated pool sized to this worker count.
    pub fn install<R: Send>(self, f: impl FnOnce() -> R + Send) -> R {
        match rayon::ThreadPoolBuilder::new().num_threads(self.0).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        }
    }
}

/// Maps `f` over `0..n` in parallel, collecting results in index order.
pub(crate) fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).into_par_iter().map(f).collect()
}

/// Fallible variant of [`map_indexed`]; the first error in index order wins.
pub(crate) fn try_map_indexed<T, E, F>(n: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(usize) -> Result<T, E> + Sync + Send,
{
    let results: Vec<Result<T, E>> = (0..n).into_par_iter().map(f).collect();
    results.into_iter().collect()
}
