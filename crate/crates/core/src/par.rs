//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature (default) work is spread over a rayon pool;
//! without it, or with [`Execution::Sequential`], everything runs in order
//! on the calling thread. Results are identical in both modes.

/// Environment variable holding the worker count for the parallel mode.
pub const THREADS_ENV: &str = "NDOPFE_THREADS";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .filter(|&n: &usize| n > 0)
}

#[cfg(feature = "parallel")]
fn pool() -> &'static rayon::ThreadPool {
    use std::sync::OnceLock;
    static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();
    POOL.get_or_init(|| {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = threads_from_env() {
            b = b.num_threads(n);
        }
        b.build().expect("thread pool")
    })
}

/// `f(0), f(1), ..., f(n-1)` in order.
pub fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return pool().install(|| (0..n).into_par_iter().map(&f).collect());
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Apply `f` to each chunk of `data`, passing the chunk index.
pub fn for_each_chunk_mut<T, F>(exec: Execution, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        pool().install(|| {
            data.par_chunks_mut(chunk)
                .enumerate()
                .for_each(|(i, c)| f(i, c))
        });
        return;
    }
    let _ = exec;
    for (i, c) in data.chunks_mut(chunk).enumerate() {
        f(i, c);
    }
}

/// Consume `items`, calling `f` on each.
pub fn for_each<T, F>(exec: Execution, items: Vec<T>, f: F)
where
    T: Send,
    F: Fn(T) + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        pool().install(|| items.into_par_iter().for_each(&f));
        return;
    }
    let _ = exec;
    items.into_iter().for_each(f);
}

/// Split `data` at the given boundaries (`bounds[0] = 0`, last = len).
pub fn split_segments<'a, T>(mut data: &'a mut [T], bounds: &[usize]) -> Vec<&'a mut [T]> {
    let mut out = Vec::with_capacity(bounds.len().saturating_sub(1));
    for w in bounds.windows(2) {
        let (head, tail) = std::mem::take(&mut data).split_at_mut(w[1] - w[0]);
        out.push(head);
        data = tail;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| (i as f64).sqrt() * 3.0;
        assert_eq!(
            map_range(Execution::Sequential, 100, f),
            map_range(Execution::Parallel, 100, f)
        );
        let mut a = vec![1.0; 37];
        let mut b = a.clone();
        for_each_chunk_mut(Execution::Sequential, &mut a, 5, |i, c| {
            c.iter_mut().for_each(|x| *x += i as f64)
        });
        for_each_chunk_mut(Execution::Parallel, &mut b, 5, |i, c| {
            c.iter_mut().for_each(|x| *x += i as f64)
        });
        assert_eq!(a, b);
    }
}
