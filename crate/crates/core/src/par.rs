//! Ordered map over independent per-image work.
//!
//! With the `parallel` feature, [`Exec::Parallel`] fans out over rayon's
//! pool; without it every call runs sequentially. Results always come back in
//! input order so downstream reductions are reproducible.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    /// Whether this mode actually runs on multiple threads in this build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

pub fn map_ordered<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Like [`map_ordered`] but keeps every error, tagged with its input index.
pub fn try_map_ordered<T, R, F>(exec: Exec, items: &[T], f: F) -> (Vec<R>, Vec<(usize, crate::Error)>)
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let mut ok = Vec::with_capacity(items.len());
    let mut failed = Vec::new();
    for (i, r) in map_ordered(exec, items, f).into_iter().enumerate() {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => failed.push((i, e)),
        }
    }
    (ok, failed)
}
