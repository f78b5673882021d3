//! Synthetic Gaussian populations and known-α mixtures.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AuditError, Result};
use crate::matrix::{check_same_dim, FeatureMatrix};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPopulationSpec {
    pub mu: Vec<f64>,
    pub sigma: DMatrix<f64>,
    pub n: usize,
    pub seed: u64,
}

const CHOLESKY_JITTER: f64 = 1e-10;

/// `n` i.i.d. draws from N(mu, sigma). Deterministic in `seed`.
pub fn gen_gaussian(spec: &GaussianPopulationSpec) -> Result<FeatureMatrix> {
    let d = spec.mu.len();
    if d == 0 || spec.n == 0 {
        return Err(AuditError::EmptyMatrix);
    }
    if spec.sigma.nrows() != d || spec.sigma.ncols() != d {
        return Err(AuditError::DimMismatch(format!(
            "mean has length {d}, covariance is {}x{}",
            spec.sigma.nrows(),
            spec.sigma.ncols()
        )));
    }
    if (&spec.sigma - spec.sigma.transpose()).amax() > 1e-12 {
        return Err(AuditError::NotPsd);
    }
    let factor = match semidefinite_cholesky(&spec.sigma) {
        Some(l) => l,
        None => {
            let jittered = &spec.sigma + DMatrix::identity(d, d) * CHOLESKY_JITTER;
            semidefinite_cholesky(&jittered).ok_or(AuditError::NotPsd)?
        }
    };

    let mut rng = rng::master(spec.seed);
    let mut data = Vec::with_capacity(spec.n * d);
    let mut z = vec![0.0; d];
    for _ in 0..spec.n {
        z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        for i in 0..d {
            let mut x = spec.mu[i];
            for (k, zk) in z.iter().enumerate().take(i + 1) {
                x += factor[(i, k)] * zk;
            }
            data.push(x);
        }
    }
    FeatureMatrix::new(data, spec.n, d)
}

/// Lower-triangular `L` with `L L^T = a`, allowing zero pivots so that
/// rank-deficient covariances (including all-zero) factor exactly.
/// Returns `None` when a pivot is clearly negative.
fn semidefinite_cholesky(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let d = a.nrows();
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = 1e-12 * scale;
    let mut l = DMatrix::<f64>::zeros(d, d);
    for j in 0..d {
        let pivot = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if pivot > tol {
            let ljj = pivot.sqrt();
            l[(j, j)] = ljj;
            for i in j + 1..d {
                let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                l[(i, j)] = s / ljj;
            }
        } else if pivot >= -tol {
            // Zero pivot: the rest of the column must vanish too.
            for i in j + 1..d {
                let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
                if s.abs() > tol.sqrt() * scale.sqrt() {
                    return None;
                }
            }
        } else {
            return None;
        }
    }
    Some(l)
}

/// Draw `n` rows: `round(alpha * n)` from `pool_v`, the rest from `pool_t`,
/// each uniformly with replacement, then shuffle. Returns the mixture and
/// `(n_from_t, n_from_v)`.
pub fn gen_mixture(
    pool_t: &FeatureMatrix,
    pool_v: &FeatureMatrix,
    alpha: f64,
    n: usize,
    seed: u64,
) -> Result<(FeatureMatrix, (usize, usize))> {
    check_same_dim(pool_t, pool_v)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AuditError::AlphaOutOfRange(alpha));
    }
    if n == 0 {
        return Err(AuditError::EmptyMatrix);
    }
    let n_v = mixture_count(alpha, n);
    let n_t = n - n_v;
    let mut rng = rng::master(seed);
    let mut picks: Vec<(bool, usize)> = Vec::with_capacity(n);
    picks.extend((0..n_t).map(|_| (false, rng.random_range(0..pool_t.n()))));
    picks.extend((0..n_v).map(|_| (true, rng.random_range(0..pool_v.n()))));
    picks.shuffle(&mut rng);

    let d = pool_t.d();
    let mut data = Vec::with_capacity(n * d);
    for (from_v, i) in picks {
        let pool = if from_v { pool_v } else { pool_t };
        data.extend_from_slice(pool.row(i));
    }
    Ok((FeatureMatrix::new(data, n, d)?, (n_t, n_v)))
}

/// Number of non-member rows in a mixture of size `n`: round half up.
pub fn mixture_count(alpha: f64, n: usize) -> usize {
    ((alpha * n as f64 + 0.5).floor() as usize).min(n)
}
