//! Replicate-level parallel map. With the `parallel` feature the work runs
//! on a rayon pool; without it, in a plain loop. Results always come back
//! in index order.

/// Applies `f` to `0..n`. `workers = None` uses the default pool size.
pub fn map_indexed<T, F>(n: usize, workers: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    imp::map_indexed(n, workers, f)
}

/// Whether the crate was built with the rayon backend.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map_indexed<T, F>(n: usize, workers: Option<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match workers {
            Some(1) => (0..n).map(f).collect(),
            Some(w) => match rayon::ThreadPoolBuilder::new().num_threads(w).build() {
                Ok(pool) => pool.install(|| (0..n).into_par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("could not start {w} workers ({e}); running sequentially");
                    (0..n).map(f).collect()
                }
            },
            None => (0..n).into_par_iter().map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_indexed<T, F>(n: usize, workers: Option<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        if workers.is_some_and(|w| w > 1) {
            log::debug!("built without the parallel feature; ignoring the worker count");
        }
        (0..n).map(f).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_preserved() {
        for workers in [None, Some(1), Some(3)] {
            let out = map_indexed(50, workers, |i| i * i);
            assert_eq!(out, (0..50).map(|i| i * i).collect::<Vec<_>>());
        }
    }
}
