//! Order-preserving data-parallel map with a sequential fallback.
//!
//! Results always come back in input order, so reductions done by the caller
//! over the returned `Vec` are identical whichever mode ran.

/// How per-item work is scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parallelism {
    Sequential,
    /// Rayon's global pool; identical to `Sequential` when the `parallel`
    /// feature is disabled.
    #[default]
    Rayon,
}

impl Parallelism {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Parallelism::Rayon
    }
}

pub fn par_map<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if mode.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = mode;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree_and_keep_order() {
        let items: Vec<u64> = (0..500).collect();
        let seq = par_map(Parallelism::Sequential, &items, |i, x| x * x + i as u64);
        let par = par_map(Parallelism::Rayon, &items, |i, x| x * x + i as u64);
        assert_eq!(seq, par);
        assert_eq!(seq[7], 56);
    }
}
