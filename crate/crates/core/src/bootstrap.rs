//! Bootstrap resampling around any point estimator of α.
//!
//! Each of the K groups resamples all three sets with replacement from its
//! own random stream (stream index = group index under the master seed),
//! evaluates the estimator, and the sorted estimates give nearest-rank
//! 5th/50th/95th percentiles. Group results are placed by index, so the
//! report does not depend on scheduling.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{AuditError, Result};
use crate::io::{AuditReport, Method};
use crate::kernel::{smia_m_point_estimate, KernelSpec, MmdConfig};
use crate::matrix::FeatureMatrix;
use crate::par;
use crate::rng;
use crate::smia0::{smia0_point_estimate, Smia0Config};
use crate::transport::{smia_w_point_estimate, SinkhornConfig, WassersteinMode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BootstrapConfig {
    /// Number of bootstrap groups.
    pub k: usize,
    pub seed: u64,
    /// Fraction of each set drawn per group, with replacement.
    pub resample_fraction: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            k: 200,
            seed: 42,
            resample_fraction: 1.0,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(AuditError::InvalidParam("bootstrap K must be at least 1".into()));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(AuditError::InvalidParam(format!(
                "resample_fraction must lie in (0, 1], got {}",
                self.resample_fraction
            )));
        }
        Ok(())
    }

    fn draw_size(&self, n: usize) -> usize {
        ((self.resample_fraction * n as f64).round() as usize).max(1)
    }
}

/// `n_draw` rows drawn uniformly with replacement, in draw order.
pub fn bootstrap_resample<R: Rng + ?Sized>(x: &FeatureMatrix, n_draw: usize, rng: &mut R) -> Result<FeatureMatrix> {
    if x.n() == 0 || n_draw == 0 {
        return Err(AuditError::EmptyMatrix);
    }
    let idx: Vec<usize> = (0..n_draw).map(|_| rng.random_range(0..x.n())).collect();
    x.select_rows(&idx)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Percentiles {
    pub p5: f64,
    pub p50: f64,
    pub p95: f64,
}

/// Nearest-rank percentiles: the value at sorted index `ceil(q·K) − 1`.
pub fn percentile_summary(alphas: &[f64]) -> Result<Percentiles> {
    if alphas.is_empty() {
        return Err(AuditError::EmptyList);
    }
    let mut sorted = alphas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = sorted.len();
    // integer arithmetic keeps ceil() away from float noise
    let at = |pct: usize| sorted[(pct * k).div_ceil(100).saturating_sub(1).min(k - 1)];
    Ok(Percentiles {
        p5: at(5),
        p50: at(50),
        p95: at(95),
    })
}

/// One α estimate plus anything worth recording about it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointEstimate {
    pub alpha: f64,
    pub diagnostics: Vec<(&'static str, f64)>,
}

impl PointEstimate {
    pub fn new(alpha: f64) -> Self {
        Self {
            alpha,
            diagnostics: Vec::new(),
        }
    }
}

pub trait PointEstimator: Sync {
    fn method(&self) -> Method;

    fn estimate(&self, x_t: &FeatureMatrix, x_v: &FeatureMatrix, x_f: &FeatureMatrix) -> Result<PointEstimate>;

    /// Kernel recorded in the report, if any.
    fn kernel(&self) -> Option<KernelSpec> {
        None
    }
}

/// Wraps a closure as an estimator.
pub struct FnEstimator<F> {
    pub method: Method,
    pub f: F,
}

impl<F> PointEstimator for FnEstimator<F>
where
    F: Fn(&FeatureMatrix, &FeatureMatrix, &FeatureMatrix) -> Result<f64> + Sync,
{
    fn method(&self) -> Method {
        self.method
    }

    fn estimate(&self, x_t: &FeatureMatrix, x_v: &FeatureMatrix, x_f: &FeatureMatrix) -> Result<PointEstimate> {
        (self.f)(x_t, x_v, x_f).map(PointEstimate::new)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Smia0Estimator {
    pub cfg: Smia0Config,
}

impl PointEstimator for Smia0Estimator {
    fn method(&self) -> Method {
        Method::Smia0
    }

    fn estimate(&self, x_t: &FeatureMatrix, x_v: &FeatureMatrix, x_f: &FeatureMatrix) -> Result<PointEstimate> {
        let sol = smia0_point_estimate(x_t, x_v, x_f, &self.cfg)?;
        Ok(PointEstimate {
            alpha: sol.alpha,
            diagnostics: vec![("residual_at_opt", sol.residual)],
        })
    }
}

/// Kernel estimator. Resolve the bandwidth before constructing this so every
/// group uses the same kernel.
#[derive(Debug, Clone, Copy)]
pub struct SmiaMEstimator {
    pub kernel: KernelSpec,
    pub cfg: MmdConfig,
}

impl PointEstimator for SmiaMEstimator {
    fn method(&self) -> Method {
        Method::SmiaM
    }

    fn estimate(&self, x_t: &FeatureMatrix, x_v: &FeatureMatrix, x_f: &FeatureMatrix) -> Result<PointEstimate> {
        let sol = smia_m_point_estimate(x_t, x_v, x_f, &self.kernel, &self.cfg)?;
        Ok(PointEstimate {
            alpha: sol.alpha,
            diagnostics: vec![("alpha_unclamped", sol.unclamped)],
        })
    }

    fn kernel(&self) -> Option<KernelSpec> {
        Some(self.kernel)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SmiaWEstimator {
    pub cfg: SinkhornConfig,
    pub mode: WassersteinMode,
}

impl PointEstimator for SmiaWEstimator {
    fn method(&self) -> Method {
        Method::SmiaW
    }

    fn estimate(&self, x_t: &FeatureMatrix, x_v: &FeatureMatrix, x_f: &FeatureMatrix) -> Result<PointEstimate> {
        let sol = smia_w_point_estimate(x_t, x_v, x_f, &self.cfg, self.mode)?;
        let mut diagnostics = vec![
            ("alpha_unclamped", sol.unclamped),
            ("w_ft", sol.w_ft),
            ("w_vt", sol.w_vt),
            ("sinkhorn_iterations", sol.iterations as f64),
            ("sinkhorn_converged", if sol.converged { 1.0 } else { 0.0 }),
            ("epsilon", sol.epsilon_ref),
        ];
        if let Some(fv) = sol.w_fv {
            diagnostics.push(("w_fv", fv));
        }
        Ok(PointEstimate {
            alpha: sol.alpha,
            diagnostics,
        })
    }
}

/// Maximum share of groups allowed to fail as degenerate.
const MAX_FAILED_SHARE_PERCENT: usize = 20;

/// Full-sample estimate for diagnostics, then K resampled estimates
/// summarized into an [`AuditReport`].
pub fn run_bootstrap_audit<E: PointEstimator + ?Sized>(
    estimator: &E,
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    cfg: &BootstrapConfig,
) -> Result<AuditReport> {
    cfg.validate()?;
    let full = estimator.estimate(x_t, x_v, x_f)?;
    let sizes = (cfg.draw_size(x_t.n()), cfg.draw_size(x_v.n()), cfg.draw_size(x_f.n()));

    let outcomes: Vec<Result<f64>> = par::map_range(cfg.k, |g| {
        let mut rng = rng::substream(cfg.seed, g as u64);
        let t = bootstrap_resample(x_t, sizes.0, &mut rng)?;
        let v = bootstrap_resample(x_v, sizes.1, &mut rng)?;
        let f = bootstrap_resample(x_f, sizes.2, &mut rng)?;
        estimator.estimate(&t, &v, &f).map(|e| e.alpha)
    });

    let mut alphas = Vec::with_capacity(cfg.k);
    let mut failed = 0;
    for outcome in outcomes {
        match outcome {
            Ok(a) => alphas.push(a),
            Err(e) if e.is_degenerate() => failed += 1,
            Err(e) => return Err(e),
        }
    }
    if alphas.is_empty() || failed * 100 > MAX_FAILED_SHARE_PERCENT * cfg.k {
        return Err(AuditError::TooManyFailedGroups { failed, total: cfg.k });
    }
    let pct = percentile_summary(&alphas)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("alpha_full_sample".to_string(), full.alpha);
    for (key, value) in full.diagnostics {
        diagnostics.insert(key.to_string(), value);
    }
    diagnostics.insert("failed_groups".to_string(), failed as f64);
    diagnostics.insert("resample_fraction".to_string(), cfg.resample_fraction);

    let epsilon = diagnostics.get("epsilon").copied();
    Ok(AuditReport {
        method: estimator.method(),
        alpha_p5: pct.p5,
        alpha_p50: pct.p50,
        alpha_p95: pct.p95,
        k_bootstrap: cfg.k,
        seed: cfg.seed,
        n_member: x_t.n(),
        n_nonmember: x_v.n(),
        n_audit: x_f.n(),
        kernel: estimator.kernel(),
        epsilon,
        diagnostics,
    })
}
