//! Order-preserving data-parallel helpers.
//!
//! The batch-heavy inner loops (per-node gradients, per-node bound sweeps,
//! per-seed experiment runs) are embarrassingly parallel. With the `parallel`
//! feature (on by default) [`map`] fans the closure across the rayon pool;
//! without it the same call runs sequentially. Either way results come back
//! in input order and every reduction downstream runs in that fixed order,
//! so outputs are bit-identical regardless of feature flags or thread count.
//!
//! [`map_seq`] is always compiled in; the criterion bench suite uses it as
//! the baseline when measuring the parallel speedup.

/// Map `f` over `items`, preserving input order in the result.
#[cfg(feature = "parallel")]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, preserving input order in the result.
#[cfg(not(feature = "parallel"))]
pub fn map<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    items.iter().map(f).collect()
}

/// Sequential reference implementation of [`map`], available under every
/// feature combination.
pub fn map_seq<T, U, F>(items: &[T], f: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_matches_sequential_reference_bitwise() {
        let xs: Vec<f64> = (0..257).map(|i| (i as f64).sin() * 1e3).collect();
        let f = |x: &f64| x.exp().sqrt() + x * 0.25;
        let par: Vec<f64> = map(&xs, f);
        let seq: Vec<f64> = map_seq(&xs, f);
        assert_eq!(par.len(), seq.len());
        for (a, b) in par.iter().zip(&seq) {
            assert_eq!(a.to_bits(), b.to_bits(), "order-preserving map must be exact");
        }
    }
}
