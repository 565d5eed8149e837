//! Worker-count aware helpers for embarrassingly parallel sweeps.

use rayon::prelude::*;

/// Environment variable consulted for the default worker count.
pub const WORKERS_ENV: &str = "COORDLAB_WORKERS";

/// Worker count from `COORDLAB_WORKERS`, else the available parallelism.
pub fn default_workers() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Maps `f` over `items` on a pool of `workers` threads. The output order is
/// the input order, whatever the scheduling.
pub fn ordered_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_is_independent_of_workers() {
        let items: Vec<u64> = (0..500).collect();
        let f = |x: &u64| x.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17);
        let one = ordered_map(&items, 1, f);
        let four = ordered_map(&items, 4, f);
        assert_eq!(one, four);
    }
}
