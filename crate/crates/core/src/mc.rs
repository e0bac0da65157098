//! Reproducible Monte Carlo plumbing.
//!
//! Sample `i` of a run with seed `seed` draws from its own ChaCha8 stream
//! (`seed` as key, `i` as stream id) and consumes it in step order, so the
//! numbers a sample sees depend only on `(seed, i, step)`. Results are
//! collected in index order and reduced with a fixed-shape pairwise sum,
//! which makes every estimate bit-identical for any thread count.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operators::{validate_operator_set, Matrix, OperatorSet, SymMatrix};

pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `f(0), ..., f(n-1)` in index order, on `threads` workers (`None` uses the
/// global pool).
pub fn par_map<T, F>(n: usize, threads: Option<usize>, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match threads {
        Some(0) => Err(Error::InvalidArgument("thread count must be >= 1".into())),
        Some(1) => Ok((0..n).map(f).collect()),
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            Ok(pool.install(|| (0..n).into_par_iter().map(&f).collect()))
        }
        None => Ok((0..n).into_par_iter().map(f).collect()),
    }
}

pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and standard error of the mean.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = pairwise_sum(xs) / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let sq: Vec<f64> = xs.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq) / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Seeded random generators: `B`, `C` of the form `A A^T / n` with standard
/// normal `A`, `D` with entries `N(0, 1/(4n))`, `alpha` uniform in
/// `[-1/2, 1/2)`. Disabled parts are zero.
pub fn random_operator_set(n: usize, seed: u64, with_c: bool, with_d: bool) -> Result<OperatorSet> {
    if n == 0 {
        return Err(Error::InvalidArgument("dimension must be >= 1".into()));
    }
    let mut rng = stream(seed, 0);
    let mut normal = |scale: f64| Matrix::from_fn(n, n, |_, _| scale * rng.sample::<f64, _>(StandardNormal));
    let mut psd = || {
        let a = normal(1.0);
        SymMatrix::symmetrize(&a * a.transpose() / n as f64)
    };
    let b = psd();
    let c = if with_c { psd() } else { SymMatrix::zeros(n) };
    let d = if with_d {
        Matrix::from_fn(n, n, |_, _| 0.5 / (n as f64).sqrt() * rng.sample::<f64, _>(StandardNormal))
    } else {
        Matrix::zeros(n, n)
    };
    let alpha = rng.random_range(-0.5..0.5);
    validate_operator_set(b, c, d, alpha)
}
