//! Batch execution helpers.
//!
//! With the default `parallel` feature, indexed batch work fans out to the
//! rayon pool; without it the same call runs sequentially. Results are
//! collected in index order either way, and all floating-point reductions
//! happen after collection, so output is bit-identical regardless of the
//! worker count.

/// Apply `f` to `0..n`, collecting results in index order (parallel when
/// the `parallel` feature is enabled).
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Send + Sync>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send, F: Fn(usize) -> T + Send + Sync>(n: usize, f: F) -> Vec<T> {
    map_indexed_seq(n, f)
}

/// Always-sequential variant, kept callable so the bench suite can compare
/// both paths in one build.
pub fn map_indexed_seq<T, F: Fn(usize) -> T>(n: usize, f: F) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Size the worker pool (no-op without the `parallel` feature, or if a
/// global pool already exists).
pub fn configure_workers(n: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = n;
}

/// Execution mode compiled into this build, recorded in run manifests.
pub fn execution_mode() -> &'static str {
    if cfg!(feature = "parallel") {
        "parallel"
    } else {
        "sequential"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let a = map_indexed(100, |i| i * i);
        let b = map_indexed_seq(100, |i| i * i);
        assert_eq!(a, b);
    }
}
