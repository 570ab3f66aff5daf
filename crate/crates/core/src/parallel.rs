use rayon::prelude::*;

/// Maps `f` over `items` on up to `jobs` threads (all cores when `None`).
/// Results come back in input order whatever the scheduling.
pub fn ordered_map<T, R, F>(items: &[T], jobs: Option<usize>, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    if jobs == Some(1) || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let run = || items.par_iter().map(&f).collect();
    match jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => items.iter().map(&f).collect(),
        },
        None => run(),
    }
}
