//! Ordered map over replication indices, on rayon or on the calling thread.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    Serial,
    /// Rayon with `threads` workers (global pool when `None`). Falls back to
    /// serial when the `parallel` feature is off.
    #[default]
    Parallel,
    Threads(usize),
}

impl Execution {
    /// `f(0), …, f(n-1)` in index order. Output never depends on scheduling.
    pub fn map<T, F>(self, n: usize, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Serial => Ok((0..n).map(f).collect()),
            Execution::Parallel => Ok(par_map(n, &f)),
            Execution::Threads(0) => Err(Error::InvalidParameter("thread count must be at least 1".into())),
            Execution::Threads(1) => Ok((0..n).map(f).collect()),
            Execution::Threads(k) => in_pool(k, n, &f),
        }
    }
}

#[cfg(feature = "parallel")]
fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: &F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: &F) -> Vec<T> {
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn in_pool<T: Send, F: Fn(usize) -> T + Sync + Send>(k: usize, n: usize, f: &F) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(k)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    Ok(pool.install(|| par_map(n, f)))
}

#[cfg(not(feature = "parallel"))]
fn in_pool<T: Send, F: Fn(usize) -> T + Sync + Send>(_k: usize, n: usize, f: &F) -> Result<Vec<T>> {
    Ok((0..n).map(f).collect())
}
