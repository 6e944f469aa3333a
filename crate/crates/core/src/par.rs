//! Deterministic data-parallel reductions.
//!
//! Work over data columns is cut into fixed-size chunks. Each chunk is mapped
//! independently (on the rayon pool when the `parallel` feature is enabled)
//! and the partial results are folded in chunk order, so the floating point
//! result does not depend on the number of workers or on the feature flag.

/// Columns per chunk. Fixed so that reduction order never changes.
pub const CHUNK_COLS: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// True when this mode will actually fan out to rayon.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps `f` over consecutive chunks of `chunk` items and returns the partial
/// results in chunk order.
pub fn map_chunks<T, R, F>(items: &[T], chunk: usize, exec: Execution, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return items
                .par_chunks(chunk)
                .enumerate()
                .map(|(i, c)| f(i, c))
                .collect();
        }
    }
    let _ = exec;
    items.chunks(chunk).enumerate().map(|(i, c)| f(i, c)).collect()
}

/// Maps `f` over `0..len` preserving index order in the output.
pub fn map_indices<R, F>(len: usize, exec: Execution, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..len).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..len).map(f).collect()
}
