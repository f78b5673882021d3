//! End-to-end audit and fixture generation, as driven by the CLI.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::bootstrap::{run_bootstrap_audit, BootstrapConfig, Smia0Estimator, SmiaMEstimator, SmiaWEstimator};
use crate::error::{AuditError, Result};
use crate::io::{write_feature_matrix, AuditReport, Method};
use crate::kernel::{resolve_bandwidth, KernelSpec, MmdConfig};
use crate::matrix::{check_same_dim, FeatureMatrix};
use crate::rng::derive_seed;
use crate::smia0::Smia0Config;
use crate::stats::{estimate_moments, filter_outliers, DEFAULT_Z_THRESHOLD};
use crate::synth::{gen_gaussian, gen_mixture, GaussianPopulationSpec};
use crate::transport::{Epsilon, SinkhornConfig, WassersteinMode};

#[derive(Debug, Clone)]
pub struct AuditOptions {
    pub method: Method,
    pub bootstrap: BootstrapConfig,
    pub smia0: Smia0Config,
    pub kernel: KernelSpec,
    pub mmd: MmdConfig,
    pub sinkhorn: SinkhornConfig,
    pub wasserstein_mode: WassersteinMode,
    /// `None` disables outlier filtering.
    pub z_threshold: Option<f64>,
}

impl AuditOptions {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            bootstrap: BootstrapConfig::default(),
            smia0: Smia0Config::default(),
            kernel: KernelSpec::default(),
            mmd: MmdConfig::default(),
            sinkhorn: SinkhornConfig::default(),
            wasserstein_mode: WassersteinMode::default(),
            z_threshold: Some(DEFAULT_Z_THRESHOLD),
        }
    }
}

/// Filter outliers against the pooled member/non-member moments, run the
/// chosen estimator under the bootstrap, and record the settings used.
pub fn run_audit(
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    opts: &AuditOptions,
) -> Result<AuditReport> {
    check_same_dim(x_t, x_v)?;
    check_same_dim(x_t, x_f)?;
    let mut removed = [0usize; 3];
    let filtered;
    let (t, v, f) = match opts.z_threshold {
        Some(z) => {
            let reference = estimate_moments(&x_t.concat(x_v)?)?;
            let (t, rt) = filter_outliers(x_t, &reference, z)?;
            let (v, rv) = filter_outliers(x_v, &reference, z)?;
            let (f, rf) = filter_outliers(x_f, &reference, z)?;
            removed = [rt.len(), rv.len(), rf.len()];
            filtered = (t, v, f);
            (&filtered.0, &filtered.1, &filtered.2)
        }
        None => (x_t, x_v, x_f),
    };

    let mut report = match opts.method {
        Method::Smia0 => run_bootstrap_audit(&Smia0Estimator { cfg: opts.smia0 }, t, v, f, &opts.bootstrap)?,
        Method::SmiaM => {
            let kernel = resolve_bandwidth(&opts.kernel, t, v)?;
            let est = SmiaMEstimator { kernel, cfg: opts.mmd };
            run_bootstrap_audit(&est, t, v, f, &opts.bootstrap)?
        }
        Method::SmiaW => {
            let est = SmiaWEstimator {
                cfg: opts.sinkhorn,
                mode: opts.wasserstein_mode,
            };
            run_bootstrap_audit(&est, t, v, f, &opts.bootstrap)?
        }
    };

    let diag = &mut report.diagnostics;
    let mut put = |k: &str, v: f64| {
        diag.insert(k.to_string(), v);
    };
    put("filter_enabled", if opts.z_threshold.is_some() { 1.0 } else { 0.0 });
    if let Some(z) = opts.z_threshold {
        put("z_threshold", z);
    }
    put("filtered_member", removed[0] as f64);
    put("filtered_nonmember", removed[1] as f64);
    put("filtered_audit", removed[2] as f64);
    match opts.method {
        Method::Smia0 => {
            put("grid_step", opts.smia0.grid_step);
            put("refine_tol", opts.smia0.refine_tol);
            put("mean_weight", opts.smia0.mean_weight);
        }
        Method::SmiaM => {
            put("max_rows", opts.mmd.max_rows as f64);
            put("bandwidth_from_median_heuristic", if opts.kernel.sigma.is_none() { 1.0 } else { 0.0 });
        }
        Method::SmiaW => {
            put("wasserstein_p", opts.sinkhorn.p as f64);
            put("sinkhorn_max_iters", opts.sinkhorn.max_iters as f64);
            put("sinkhorn_tol", opts.sinkhorn.tol);
            put("sinkhorn_log_domain", if opts.sinkhorn.log_domain { 1.0 } else { 0.0 });
            put(
                "polarization_mode",
                if opts.wasserstein_mode == WassersteinMode::Polarization { 1.0 } else { 0.0 },
            );
            if let Epsilon::MedianScaled(factor) = opts.sinkhorn.epsilon {
                put("epsilon_median_factor", factor);
            }
        }
    }
    report.validate()?;
    Ok(report)
}

/// Member pool N(0, I), non-member pool N(sep·1, I), and an audit set
/// mixing fresh draws from both at rate α.
#[derive(Debug, Clone)]
pub struct SynthFixtures {
    pub member: FeatureMatrix,
    pub nonmember: FeatureMatrix,
    pub audit: FeatureMatrix,
    pub truth: Truth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub alpha: f64,
    pub n: usize,
    pub n_from_t: usize,
    pub n_from_v: usize,
    /// Realized non-member fraction `n_from_v / n`.
    pub realized_alpha: f64,
    pub d: usize,
    pub sep: f64,
    pub seed: u64,
}

pub fn synth_fixtures(alpha: f64, n: usize, d: usize, sep: f64, seed: u64) -> Result<SynthFixtures> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(AuditError::AlphaOutOfRange(alpha));
    }
    if !sep.is_finite() {
        return Err(AuditError::InvalidParam(format!("separation {sep} must be finite")));
    }
    let population = |mean: f64, stream: u64| {
        gen_gaussian(&GaussianPopulationSpec {
            mu: vec![mean; d],
            sigma: DMatrix::identity(d, d),
            n,
            seed: derive_seed(seed, stream),
        })
    };
    let member = population(0.0, 0)?;
    let nonmember = population(sep, 1)?;
    let pool_t = population(0.0, 2)?;
    let pool_v = population(sep, 3)?;
    let (audit, (n_from_t, n_from_v)) = gen_mixture(&pool_t, &pool_v, alpha, n, derive_seed(seed, 4))?;
    Ok(SynthFixtures {
        member,
        nonmember,
        audit,
        truth: Truth {
            alpha,
            n,
            n_from_t,
            n_from_v,
            realized_alpha: n_from_v as f64 / n as f64,
            d,
            sep,
            seed,
        },
    })
}

impl SynthFixtures {
    /// Writes member.csv, nonmember.csv, audit.csv and truth.json.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        write_feature_matrix(&self.member, dir.join("member.csv"))?;
        write_feature_matrix(&self.nonmember, dir.join("nonmember.csv"))?;
        write_feature_matrix(&self.audit, dir.join("audit.csv"))?;
        let path = dir.join("truth.json");
        let mut json =
            serde_json::to_string_pretty(&self.truth).map_err(|e| AuditError::Validation(e.to_string()))?;
        json.push('\n');
        std::fs::write(&path, json).map_err(|source| AuditError::Io { path, source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_deterministic_and_counted() {
        let a = synth_fixtures(0.3, 1000, 2, 3.0, 7).unwrap();
        assert_eq!((a.truth.n_from_t, a.truth.n_from_v), (700, 300));
        let b = synth_fixtures(0.3, 1000, 2, 3.0, 7).unwrap();
        assert_eq!(a.audit, b.audit);
        assert_eq!(a.member, b.member);
        assert_ne!(a.member, a.nonmember);
        let zero = synth_fixtures(0.0, 50, 3, 3.0, 7).unwrap();
        assert_eq!(zero.truth.n_from_v, 0);
        assert!(synth_fixtures(1.2, 10, 2, 3.0, 7).is_err());
    }

    #[test]
    fn audit_with_each_method() {
        let fx = synth_fixtures(0.3, 300, 2, 3.0, 11).unwrap();
        for method in [Method::Smia0, Method::SmiaM, Method::SmiaW] {
            let mut opts = AuditOptions::new(method);
            opts.bootstrap.k = 20;
            if method == Method::SmiaW {
                opts.bootstrap.resample_fraction = 0.3;
            }
            let r = run_audit(&fx.member, &fx.nonmember, &fx.audit, &opts).unwrap();
            assert_eq!(r.method, method);
            assert_eq!(r.k_bootstrap, 20);
            assert!(r.diagnostics.contains_key("filtered_audit"));
            match method {
                Method::SmiaM => assert!(r.kernel.unwrap().sigma.is_some()),
                Method::SmiaW => assert!(r.epsilon.unwrap() > 0.0),
                Method::Smia0 => assert!(r.kernel.is_none() && r.epsilon.is_none()),
            }
            if method != Method::SmiaW {
                assert!((r.alpha_p50 - 0.3).abs() < 0.1, "{method:?}: {}", r.alpha_p50);
            }
        }
    }

    #[test]
    fn filtering_reports_removed_rows() {
        let fx = synth_fixtures(0.3, 200, 2, 3.0, 12).unwrap();
        let mut rows: Vec<Vec<f64>> = fx.audit.rows().map(|r| r.to_vec()).collect();
        rows.push(vec![1e6, 0.0]);
        let audit = FeatureMatrix::from_rows(&rows).unwrap();
        let mut opts = AuditOptions::new(Method::Smia0);
        opts.bootstrap.k = 10;
        let r = run_audit(&fx.member, &fx.nonmember, &audit, &opts).unwrap();
        assert_eq!(r.diagnostics["filtered_audit"], 1.0);
        assert_eq!(r.n_audit, 200);
        opts.z_threshold = None;
        let r = run_audit(&fx.member, &fx.nonmember, &audit, &opts).unwrap();
        assert_eq!(r.diagnostics["filtered_audit"], 0.0);
        assert_eq!(r.n_audit, 201);
    }
}
