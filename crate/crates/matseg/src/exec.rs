use std::sync::Arc;

use matseg_core::exec::Executor;
use rayon::prelude::*;

use crate::{Error, Result};

/// Runs items on a rayon pool. Results come back in index order.
#[derive(Clone)]
pub struct Rayon {
    pool: Arc<rayon::ThreadPool>,
}

impl Rayon {
    /// `threads == 0` lets rayon pick the worker count.
    pub fn new(threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))?;
        Ok(Rayon { pool: Arc::new(pool) })
    }

    pub fn threads(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Rayon {
    fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..len).into_par_iter().map(f).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_index_order() {
        let r = Rayon::new(4).unwrap();
        assert_eq!(r.map(1000, |i| i * 2), (0..1000).map(|i| i * 2).collect::<Vec<_>>());
        assert_eq!(r.threads(), 4);
    }
}
