//! Worker execution modes.
//!
//! `Sequential` runs items in index order on the calling thread and is the
//! reference. `Parallel` fans out over rayon when the `parallel` feature is
//! enabled and silently degrades to sequential otherwise. Results always come
//! back in index order, so any reduction done by the caller is identical in
//! both modes.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExecMode {
    Sequential,
    #[default]
    Parallel,
}

impl ExecMode {
    pub fn is_parallel_available() -> bool {
        cfg!(feature = "parallel")
    }
}

impl std::str::FromStr for ExecMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(ExecMode::Sequential),
            "parallel" => Ok(ExecMode::Parallel),
            other => Err(format!("unknown exec mode `{other}`")),
        }
    }
}

/// Map `f` over `items`, preserving order.
pub fn map_vec<T, U, F>(mode: ExecMode, items: Vec<T>, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.into_par_iter().map(f).collect()
        }
        _ => items.into_iter().map(f).collect(),
    }
}

/// Map `f` over `0..len`, preserving order.
pub fn map_range<U, F>(mode: ExecMode, len: usize, f: F) -> Vec<U>
where
    U: Send,
    F: Fn(usize) -> U + Sync + Send,
{
    match mode {
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            (0..len).into_par_iter().map(f).collect()
        }
        _ => (0..len).map(f).collect(),
    }
}

/// Split `total` into fixed-size chunks `(start, len)`; boundaries depend only
/// on `total` and `chunk`, never on the execution mode.
pub fn chunks(total: usize, chunk: usize) -> Vec<(usize, usize)> {
    let chunk = chunk.max(1);
    (0..total)
        .step_by(chunk)
        .map(|start| (start, chunk.min(total - start)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let a = map_range(ExecMode::Sequential, 100, |i| (i as f64).sqrt());
        let b = map_range(ExecMode::Parallel, 100, |i| (i as f64).sqrt());
        assert_eq!(a, b);
    }

    #[test]
    fn chunk_cover() {
        let c = chunks(10, 4);
        assert_eq!(c, vec![(0, 4), (4, 4), (8, 2)]);
        assert!(chunks(0, 4).is_empty());
    }
}
