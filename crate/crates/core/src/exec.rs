//! Data-parallel helpers with a sequential fallback.
//!
//! Results are always returned in index order, so a parallel run produces
//! exactly what the serial run produces. Without the `parallel` feature
//! [`Exec::Parallel`] degrades to serial execution.

/// How independent work items are scheduled.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Exec {
    Serial,
    #[default]
    Parallel,
}

impl Exec {
    /// `f(0), f(1), ..., f(n - 1)`, collected in order.
    pub fn map_range<R, F>(self, n: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(usize) -> R + Send + Sync,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                (0..n).into_par_iter().map(f).collect()
            }
            _ => (0..n).map(f).collect(),
        }
    }

    /// Maps owned items, preserving order.
    pub fn map_vec<T, R, F>(self, items: Vec<T>, f: F) -> Vec<R>
    where
        T: Send,
        R: Send,
        F: Fn(T) -> R + Send + Sync,
    {
        match self {
            #[cfg(feature = "parallel")]
            Exec::Parallel => {
                use rayon::prelude::*;
                items.into_par_iter().map(f).collect()
            }
            _ => items.into_iter().map(f).collect(),
        }
    }

    /// True when work actually fans out to a thread pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Caps the global worker pool. Has no effect without the `parallel` feature
/// or once the pool has been initialised.
pub fn set_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    let _ = threads;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_serial_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        assert_eq!(Exec::Serial.map_range(1000, f), Exec::Parallel.map_range(1000, f));
        let v: Vec<u32> = (0..100).collect();
        assert_eq!(
            Exec::Parallel.map_vec(v.clone(), |x| x * 3),
            v.iter().map(|x| x * 3).collect::<Vec<_>>()
        );
    }
}
