//! Execution strategy for the data-parallel inner loops (per-ray rendering,
//! gradient accumulation, per-pixel lighting queries, batch planning runs).
//!
//! With the `parallel` feature (default) [`Exec::Parallel`] dispatches onto the
//! rayon global pool. Without it every strategy runs sequentially, so callers
//! never need their own `cfg` switches.

use serde::{Deserialize, Serialize};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exec {
    Sequential,
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    /// True when this strategy actually fans out across threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f).collect()`, preserving index order.
    pub fn map_range<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps over a slice, preserving order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            return items.par_iter().map(f).collect();
        }
        items.iter().map(f).collect()
    }

    /// Folds `0..n` in contiguous chunks, then reduces the per-chunk
    /// accumulators left to right. The chunking is identical in both modes, so
    /// floating-point results are bitwise equal between them.
    pub fn fold_chunks<A, Init, Fold, Reduce>(
        self,
        n: usize,
        chunk: usize,
        init: Init,
        fold: Fold,
        reduce: Reduce,
    ) -> A
    where
        A: Send,
        Init: Fn() -> A + Sync + Send,
        Fold: Fn(&mut A, usize) + Sync + Send,
        Reduce: Fn(A, A) -> A,
    {
        let chunk = chunk.max(1);
        let n_chunks = n.div_ceil(chunk);
        let partials = self.map_range(n_chunks, |c| {
            let mut acc = init();
            let end = ((c + 1) * chunk).min(n);
            for i in c * chunk..end {
                fold(&mut acc, i);
            }
            acc
        });
        partials.into_iter().fold(init(), reduce)
    }
}
