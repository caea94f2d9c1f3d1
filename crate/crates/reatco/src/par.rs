//! Frame-level execution strategy.
//!
//! Per-frame work in the denoiser and the guidance losses is independent, so
//! it can run data-parallel. Reductions are always performed afterwards in
//! ascending frame order, which keeps parallel and sequential runs
//! bit-identical. The `parallel` feature (on by default) backs
//! [`ExecMode::Parallel`] with rayon; without it both modes run sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

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

/// Map `f` over `0..n`, returning results in index order.
pub fn map_indexed<T, F>(n: usize, mode: ExecMode, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match mode {
        ExecMode::Sequential => (0..n).map(f).collect(),
        ExecMode::Parallel => {
            #[cfg(feature = "parallel")]
            {
                (0..n).into_par_iter().map(f).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                (0..n).map(f).collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let seq = map_indexed(16, ExecMode::Sequential, |i| i * i);
        let par = map_indexed(16, ExecMode::Parallel, |i| i * i);
        assert_eq!(seq, par);
    }
}
