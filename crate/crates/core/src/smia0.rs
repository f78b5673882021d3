//! Moment-matching forgetting-rate estimator.
//!
//! If the audit set is an α-mixture of member (t) and non-member (v)
//! populations, its moments are
//!
//! ```text
//! mu_f    = α mu_v + (1-α) mu_t
//! Sigma_f = α Sigma_v + (1-α) Sigma_t + (α - α²) Δ²,   Δ² = (mu_v-mu_t)(mu_v-mu_t)^T
//! ```
//!
//! α is recovered by minimizing the squared Frobenius residual of the
//! covariance identity, optionally plus a weighted residual of the mean
//! identity, over `[0, 1]`.

use crate::error::{AuditError, Result};
use crate::matrix::{check_same_dim, FeatureMatrix};
use crate::stats::{estimate_moments, mean_gap_outer, MomentStats};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smia0Config {
    /// Coarse grid spacing on [0, 1].
    pub grid_step: f64,
    /// Width of the final refinement bracket.
    pub refine_tol: f64,
    /// Weight of the mean residual. Zero leaves only the covariance term.
    pub mean_weight: f64,
}

impl Default for Smia0Config {
    fn default() -> Self {
        Self {
            grid_step: 1e-3,
            refine_tol: 1e-6,
            mean_weight: 1.0,
        }
    }
}

impl Smia0Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.grid_step > 0.0 && self.grid_step <= 0.1) {
            return Err(AuditError::InvalidParam(format!(
                "grid_step must lie in (0, 0.1], got {}",
                self.grid_step
            )));
        }
        if !(self.refine_tol > 0.0 && self.refine_tol <= self.grid_step) {
            return Err(AuditError::InvalidParam(format!(
                "refine_tol must lie in (0, grid_step], got {}",
                self.refine_tol
            )));
        }
        if !(self.mean_weight >= 0.0 && self.mean_weight.is_finite()) {
            return Err(AuditError::InvalidParam(format!(
                "mean_weight must be nonnegative, got {}",
                self.mean_weight
            )));
        }
        Ok(())
    }
}

fn check_dims(a: &MomentStats, b: &MomentStats) -> Result<()> {
    if a.d() != b.d() {
        return Err(AuditError::DimMismatch(format!(
            "moment dimensions {} vs {}",
            a.d(),
            b.d()
        )));
    }
    Ok(())
}

/// Moments of the α-mixture of `t` and `v`. The returned `n` is zero: the
/// moments are population quantities, not computed from samples.
pub fn mixture_moments(alpha: f64, t: &MomentStats, v: &MomentStats) -> Result<MomentStats> {
    check_dims(t, v)?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AuditError::AlphaOutOfRange(alpha));
    }
    let delta2 = mean_gap_outer(&v.mu, &t.mu)?.delta2;
    Ok(MomentStats {
        mu: &v.mu * alpha + &t.mu * (1.0 - alpha),
        sigma: &v.sigma * alpha + &t.sigma * (1.0 - alpha) + delta2 * (alpha - alpha * alpha),
        n: 0,
    })
}

/// Residual evaluator with Δ² precomputed; `eval` is cheap enough to call
/// a few thousand times per point estimate.
struct Residual<'a> {
    t: &'a MomentStats,
    v: &'a MomentStats,
    f: &'a MomentStats,
    delta2: nalgebra::DMatrix<f64>,
    mean_weight: f64,
}

impl<'a> Residual<'a> {
    fn new(t: &'a MomentStats, v: &'a MomentStats, f: &'a MomentStats, mean_weight: f64) -> Result<Self> {
        check_dims(t, v)?;
        check_dims(t, f)?;
        Ok(Self {
            t,
            v,
            f,
            delta2: mean_gap_outer(&v.mu, &t.mu)?.delta2,
            mean_weight,
        })
    }

    fn eval(&self, alpha: f64) -> f64 {
        let beta = 1.0 - alpha;
        let curv = alpha - alpha * alpha;
        let d = self.t.d();
        let mut cov = 0.0;
        for j in 0..d {
            for i in 0..d {
                let model = alpha * self.v.sigma[(i, j)]
                    + beta * self.t.sigma[(i, j)]
                    + curv * self.delta2[(i, j)];
                let r = self.f.sigma[(i, j)] - model;
                cov += r * r;
            }
        }
        if self.mean_weight == 0.0 {
            return cov;
        }
        let mut mean = 0.0;
        for i in 0..d {
            let r = self.f.mu[i] - alpha * self.v.mu[i] - beta * self.t.mu[i];
            mean += r * r;
        }
        cov + self.mean_weight * mean
    }
}

/// `‖Sigma_f - mixture covariance(α)‖²_F + mean_weight · ‖mu_f - mixture mean(α)‖²`.
pub fn residual(
    alpha: f64,
    t: &MomentStats,
    v: &MomentStats,
    f: &MomentStats,
    mean_weight: f64,
) -> Result<f64> {
    Ok(Residual::new(t, v, f, mean_weight)?.eval(alpha))
}

const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Smia0Solution {
    pub alpha: f64,
    pub residual: f64,
}

/// Minimize the residual over [0, 1]: coarse grid, then trisection around
/// the best grid point. Ties go to the smaller α.
pub fn solve_alpha(
    t: &MomentStats,
    v: &MomentStats,
    f: &MomentStats,
    cfg: &Smia0Config,
) -> Result<Smia0Solution> {
    cfg.validate()?;
    let r = Residual::new(t, v, f, cfg.mean_weight)?;
    let mean_gap = (&v.mu - &t.mu).norm();
    let cov_gap = (&v.sigma - &t.sigma).norm();
    if mean_gap < DEGENERACY_TOL && cov_gap < DEGENERACY_TOL {
        return Err(AuditError::DegeneratePopulations);
    }

    let steps = (1.0 / cfg.grid_step).ceil() as usize;
    let grid = |i: usize| (i as f64 / steps as f64).min(1.0);
    let mut best = (0.0, r.eval(0.0));
    for i in 1..=steps {
        let a = grid(i);
        let val = r.eval(a);
        if val < best.1 {
            best = (a, val);
        }
    }

    let h = 1.0 / steps as f64;
    let mut lo = (best.0 - h).max(0.0);
    let mut hi = (best.0 + h).min(1.0);
    while hi - lo > cfg.refine_tol {
        let w = (hi - lo) / 3.0;
        let (m1, m2) = (lo + w, hi - w);
        if r.eval(m1) <= r.eval(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    let mut candidates = [lo, 0.5 * (lo + hi), hi, best.0];
    candidates.sort_by(f64::total_cmp);
    let mut sol = Smia0Solution {
        alpha: candidates[0],
        residual: r.eval(candidates[0]),
    };
    for &a in &candidates[1..] {
        let val = r.eval(a);
        if val < sol.residual {
            sol = Smia0Solution { alpha: a, residual: val };
        }
    }
    Ok(sol)
}

/// Moments of the three matrices, then [`solve_alpha`].
pub fn smia0_point_estimate(
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    cfg: &Smia0Config,
) -> Result<Smia0Solution> {
    check_same_dim(x_t, x_v)?;
    check_same_dim(x_t, x_f)?;
    let t = estimate_moments(x_t)?;
    let v = estimate_moments(x_v)?;
    let f = estimate_moments(x_f)?;
    solve_alpha(&t, &v, &f, cfg)
}
