//! Batch-parallel execution helpers.
//!
//! With the `parallel` feature (on by default) jobs run on the rayon pool;
//! without it everything runs sequentially. Every helper assigns each job
//! its own output slot, so results are bit-identical regardless of thread
//! count or scheduling. Reductions over job outputs are always performed
//! sequentially in index order by the callers.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution strategy for a batch of independent jobs.
///
/// `Parallel` falls back to sequential execution when the crate is built
/// without the `parallel` feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    Sequential,
    Parallel,
}

impl Default for ExecMode {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            ExecMode::Parallel
        } else {
            ExecMode::Sequential
        }
    }
}

/// Runs `f(0..n)` and collects the results in index order.
pub fn map_collect<U, F>(n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    map_collect_with(ExecMode::default(), n, f)
}

/// `map_collect` with an explicit execution mode (used by the bench suite
/// to compare both paths).
pub fn map_collect_with<U, F>(mode: ExecMode, n: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = mode;
    (0..n).map(f).collect()
}

/// Splits `data` into chunks of `chunk_len` and applies `f(chunk_index, chunk)`
/// to each. The last chunk may be shorter.
pub fn chunks_for_each<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    chunks_for_each_with(ExecMode::default(), data, chunk_len, f)
}

pub fn chunks_for_each_with<T, F>(mode: ExecMode, data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    assert!(chunk_len > 0, "chunk_len must be positive");
    #[cfg(feature = "parallel")]
    if mode == ExecMode::Parallel {
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = mode;
    for (i, c) in data.chunks_mut(chunk_len).enumerate() {
        f(i, c);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_collect_matches_sequential() {
        let par = map_collect_with(ExecMode::Parallel, 100, |i| i * i);
        let seq = map_collect_with(ExecMode::Sequential, 100, |i| i * i);
        assert_eq!(par, seq);
    }

    #[test]
    fn chunks_cover_all_slots() {
        let mut data = vec![0usize; 10];
        chunks_for_each(&mut data, 3, |i, chunk| {
            for v in chunk.iter_mut() {
                *v = i + 1;
            }
        });
        assert_eq!(data, vec![1, 1, 1, 2, 2, 2, 3, 3, 3, 4]);
    }
}
