//! Execution strategy for data-parallel loops.
//!
//! With the `parallel` feature (default) both variants are available so the
//! benches can compare them; without it only [`Execution::Sequential`] exists.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// Order-preserving map.
    pub fn map<T, R, F>(self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).collect(),
        }
    }

    /// Sums `f` over `items`. Integer sums are order-independent, so both
    /// strategies produce identical results.
    pub fn sum_counts<T, F>(self, items: &[T], f: F) -> (u64, u64, u64)
    where
        T: Sync,
        F: Fn(&T) -> (u64, u64, u64) + Sync + Send,
    {
        let add = |a: (u64, u64, u64), b: (u64, u64, u64)| (a.0 + b.0, a.1 + b.1, a.2 + b.2);
        match self {
            Execution::Sequential => items.iter().map(f).fold((0, 0, 0), add),
            #[cfg(feature = "parallel")]
            Execution::Parallel => items.par_iter().map(f).reduce(|| (0, 0, 0), add),
        }
    }

    /// Runs `f` on every item, stopping at the first error. In parallel mode
    /// items already in flight when an error occurs still complete.
    #[cfg_attr(not(feature = "parallel"), allow(unused_variables))]
    pub fn try_for_each<T, E, F>(self, workers: usize, items: &[T], f: F) -> Result<(), E>
    where
        T: Sync,
        E: Send,
        F: Fn(&T) -> Result<(), E> + Sync + Send,
    {
        match self {
            Execution::Sequential => items.iter().try_for_each(f),
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(workers.max(1))
                    .build();
                match pool {
                    Ok(pool) => pool.install(|| items.par_iter().try_for_each(f)),
                    Err(err) => {
                        log::warn!("thread pool unavailable ({err}), running sequentially");
                        items.iter().try_for_each(f)
                    }
                }
            }
        }
    }
}
