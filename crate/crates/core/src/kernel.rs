//! Kernels, maximum mean discrepancy, and the kernel-embedding estimator.
//!
//! The kernel estimator matches the empirical mean embedding of the audit
//! set against the segment between the member and non-member embeddings:
//!
//! ```text
//! min_{0≤α≤1} ‖μ_f − α μ_v − (1−α) μ_t‖²_H
//!   = α² ‖μ_v − μ_t‖² − 2α ⟨μ_f − μ_t, μ_v − μ_t⟩ + const
//! ```
//!
//! which is a convex quadratic with minimizer `T / D` clamped to `[0, 1]`.
//! All inner products come from mean Gram blocks (biased V-statistics).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::matrix::{check_same_dim, dot, sq_dist, FeatureMatrix};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Rbf,
    Laplacian,
    Polynomial,
    RationalQuadratic,
}

/// Kernel family plus its parameters. Parameters that the family does not
/// use are carried along and ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Bandwidth for rbf, laplacian and rational quadratic. `None` means
    /// "fill in with the median heuristic".
    pub sigma: Option<f64>,
    /// Polynomial bias.
    pub c: f64,
    /// Polynomial degree.
    pub p: u32,
    /// Rational-quadratic tail parameter.
    pub alpha_rq: f64,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::Rbf,
            sigma: None,
            c: 1.0,
            p: 2,
            alpha_rq: 1.0,
        }
    }
}

impl KernelSpec {
    pub fn rbf(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Rbf,
            sigma: Some(sigma),
            ..Self::default()
        }
    }

    pub fn laplacian(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Laplacian,
            sigma: Some(sigma),
            ..Self::default()
        }
    }

    pub fn polynomial(c: f64, p: u32) -> Self {
        Self {
            family: KernelFamily::Polynomial,
            c,
            p,
            ..Self::default()
        }
    }

    /// `k(x, y) = xᵀy`.
    pub fn linear() -> Self {
        Self::polynomial(0.0, 1)
    }

    pub fn rational_quadratic(sigma: f64, alpha_rq: f64) -> Self {
        Self {
            family: KernelFamily::RationalQuadratic,
            sigma: Some(sigma),
            alpha_rq,
            ..Self::default()
        }
    }

    pub fn needs_bandwidth(&self) -> bool {
        self.family != KernelFamily::Polynomial
    }

    /// Validate the parameters the family uses.
    pub fn resolve(&self) -> Result<Kernel> {
        let bandwidth = || match self.sigma {
            Some(s) if s > 0.0 && s.is_finite() => Ok(s),
            Some(s) => Err(AuditError::InvalidParam(format!("sigma must be positive, got {s}"))),
            None => Err(AuditError::InvalidParam("kernel bandwidth sigma is unset".into())),
        };
        Ok(match self.family {
            KernelFamily::Rbf => {
                let s = bandwidth()?;
                Kernel::Rbf { gamma: 1.0 / (2.0 * s * s) }
            }
            KernelFamily::Laplacian => Kernel::Laplacian { inv_sigma: 1.0 / bandwidth()? },
            KernelFamily::Polynomial => {
                if !(self.c >= 0.0 && self.c.is_finite()) {
                    return Err(AuditError::InvalidParam(format!(
                        "polynomial bias c must be nonnegative, got {}",
                        self.c
                    )));
                }
                if self.p == 0 {
                    return Err(AuditError::InvalidParam("polynomial degree must be positive".into()));
                }
                Kernel::Polynomial { c: self.c, p: self.p as i32 }
            }
            KernelFamily::RationalQuadratic => {
                let s = bandwidth()?;
                if !(self.alpha_rq > 0.0 && self.alpha_rq.is_finite()) {
                    return Err(AuditError::InvalidParam(format!(
                        "alpha_rq must be positive, got {}",
                        self.alpha_rq
                    )));
                }
                Kernel::RationalQuadratic {
                    scale: 1.0 / (2.0 * self.alpha_rq * s * s),
                    alpha: self.alpha_rq,
                }
            }
        })
    }
}

/// A validated kernel, ready for inner loops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Rbf { gamma: f64 },
    Laplacian { inv_sigma: f64 },
    Polynomial { c: f64, p: i32 },
    RationalQuadratic { scale: f64, alpha: f64 },
}

impl Kernel {
    /// Symmetric in its arguments bit for bit.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match *self {
            Kernel::Rbf { gamma } => (-gamma * sq_dist(x, y)).exp(),
            Kernel::Laplacian { inv_sigma } => {
                let l1: f64 = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum();
                (-l1 * inv_sigma).exp()
            }
            Kernel::Polynomial { c, p } => (dot(x, y) + c).powi(p),
            Kernel::RationalQuadratic { scale, alpha } => (1.0 + sq_dist(x, y) * scale).powf(-alpha),
        }
    }
}

pub fn kernel_eval(k: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AuditError::DimMismatch(format!("vectors of length {} and {}", x.len(), y.len())));
    }
    Ok(k.resolve()?.eval(x, y))
}

/// Lower median of all pairwise Euclidean distances in `x ∪ y`.
pub fn median_heuristic(x: &FeatureMatrix, y: &FeatureMatrix) -> Result<f64> {
    check_same_dim(x, y)?;
    let pooled = x.concat(y)?;
    let n = pooled.n();
    if n < 2 {
        return Err(AuditError::TooFewSamples { needed: 2, got: n });
    }
    let mut dists: Vec<f64> = par::map_range(n, |i| {
        let zi = pooled.row(i);
        (i + 1..n).map(|j| sq_dist(zi, pooled.row(j))).collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let mid = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let sigma = median.sqrt();
    if sigma == 0.0 {
        return Err(AuditError::AllPointsIdentical);
    }
    Ok(sigma)
}

/// Orders two matrices so that cross sums can be computed in one canonical
/// orientation, making `cross(x, y)` and `cross(y, x)` bitwise equal.
fn canonical_order(x: &FeatureMatrix, y: &FeatureMatrix) -> Ordering {
    x.n().cmp(&y.n()).then_with(|| {
        x.as_slice()
            .iter()
            .zip(y.as_slice())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `Σᵢ Σⱼ k(xᵢ, yⱼ)`.
fn cross_sum(x: &FeatureMatrix, y: &FeatureMatrix, k: &Kernel) -> f64 {
    let (a, b) = match canonical_order(x, y) {
        Ordering::Greater => (y, x),
        _ => (x, y),
    };
    par::sum_range(a.n(), |i| {
        let ai = a.row(i);
        b.rows().map(|bj| k.eval(ai, bj)).sum::<f64>()
    })
}

/// `(Σ_{i<j} k(xᵢ, xⱼ), Σᵢ k(xᵢ, xᵢ))`.
fn self_sums(x: &FeatureMatrix, k: &Kernel) -> (f64, f64) {
    let n = x.n();
    let parts = par::map_range(n, |i| {
        let xi = x.row(i);
        let upper: f64 = (i + 1..n).map(|j| k.eval(xi, x.row(j))).sum();
        (upper, k.eval(xi, xi))
    });
    parts
        .into_iter()
        .fold((0.0, 0.0), |(u, dg), (pu, pd)| (u + pu, dg + pd))
}

fn self_mean_biased(x: &FeatureMatrix, k: &Kernel) -> f64 {
    let (upper, diag) = self_sums(x, k);
    let n = x.n() as f64;
    (2.0 * upper + diag) / (n * n)
}

fn cross_mean(x: &FeatureMatrix, y: &FeatureMatrix, k: &Kernel) -> f64 {
    if x.d() == y.d() && canonical_order(x, y) == Ordering::Equal {
        return self_mean_biased(x, k);
    }
    cross_sum(x, y, k) / (x.n() as f64 * y.n() as f64)
}

const CLAMP_NOISE: f64 = 1e-12;

/// Biased (V-statistic) estimate of MMD². Values in (−1e-12, 0) are
/// reported as 0.
pub fn mmd2_biased(x: &FeatureMatrix, y: &FeatureMatrix, k: &KernelSpec) -> Result<f64> {
    check_same_dim(x, y)?;
    let k = k.resolve()?;
    let v = self_mean_biased(x, &k) + self_mean_biased(y, &k) - 2.0 * cross_mean(x, y, &k);
    Ok(if v < 0.0 && v > -CLAMP_NOISE { 0.0 } else { v })
}

/// Unbiased (U-statistic) estimate of MMD². May be negative.
pub fn mmd2_unbiased(x: &FeatureMatrix, y: &FeatureMatrix, k: &KernelSpec) -> Result<f64> {
    check_same_dim(x, y)?;
    for m in [x, y] {
        if m.n() < 2 {
            return Err(AuditError::TooFewSamples { needed: 2, got: m.n() });
        }
    }
    let k = k.resolve()?;
    let off = |m: &FeatureMatrix| {
        let n = m.n() as f64;
        2.0 * self_sums(m, &k).0 / (n * (n - 1.0))
    };
    Ok(off(x) + off(y) - 2.0 * cross_mean(x, y, &k))
}

/// Mean Gram blocks `⟨μ̂_a, μ̂_b⟩_H` for `a, b ∈ {t, v, f}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingGeometry {
    pub tt: f64,
    pub vv: f64,
    pub ff: f64,
    pub tv: f64,
    pub tf: f64,
    pub vf: f64,
}

impl EmbeddingGeometry {
    /// `‖μ_v − μ_t‖²`, the leading coefficient of the objective.
    pub fn leading(&self) -> f64 {
        self.vv + self.tt - 2.0 * self.tv
    }

    /// `⟨μ_f − μ_t, μ_v − μ_t⟩`.
    pub fn projection(&self) -> f64 {
        // Grouped so that f = t gives exactly zero.
        (self.vf - self.tv) + (self.tt - self.tf)
    }

    /// `‖μ_f − α μ_v − (1−α) μ_t‖²` expanded in Gram blocks.
    pub fn objective(&self, alpha: f64) -> f64 {
        let beta = 1.0 - alpha;
        self.ff - 2.0 * alpha * self.vf - 2.0 * beta * self.tf
            + alpha * alpha * self.vv
            + 2.0 * alpha * beta * self.tv
            + beta * beta * self.tt
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MmdConfig {
    /// Largest row count accepted per input; Gram work is quadratic.
    pub max_rows: usize,
}

impl Default for MmdConfig {
    fn default() -> Self {
        Self { max_rows: 20_000 }
    }
}

pub fn embedding_geometry(
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    k: &KernelSpec,
) -> Result<EmbeddingGeometry> {
    check_same_dim(x_t, x_v)?;
    check_same_dim(x_t, x_f)?;
    let k = k.resolve()?;
    Ok(EmbeddingGeometry {
        tt: self_mean_biased(x_t, &k),
        vv: self_mean_biased(x_v, &k),
        ff: self_mean_biased(x_f, &k),
        tv: cross_mean(x_t, x_v, &k),
        tf: cross_mean(x_t, x_f, &k),
        vf: cross_mean(x_v, x_f, &k),
    })
}

const EMBEDDING_DEGENERACY: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmiaMSolution {
    pub alpha: f64,
    /// `T / D` before clamping to [0, 1].
    pub unclamped: f64,
}

/// Constrained minimizer of the embedding objective over [0, 1].
pub fn smia_m_alpha(geom: &EmbeddingGeometry) -> Result<SmiaMSolution> {
    let d = geom.leading();
    if !(d > EMBEDDING_DEGENERACY) {
        return Err(AuditError::DegenerateEmbeddings(d));
    }
    let unclamped = geom.projection() / d;
    Ok(SmiaMSolution {
        alpha: unclamped.clamp(0.0, 1.0),
        unclamped,
    })
}

/// Fills a missing bandwidth with the median heuristic over `x_t ∪ x_v`.
pub fn resolve_bandwidth(k: &KernelSpec, x_t: &FeatureMatrix, x_v: &FeatureMatrix) -> Result<KernelSpec> {
    if k.needs_bandwidth() && k.sigma.is_none() {
        return Ok(KernelSpec {
            sigma: Some(median_heuristic(x_t, x_v)?),
            ..*k
        });
    }
    Ok(*k)
}

pub fn smia_m_point_estimate(
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    k: &KernelSpec,
    cfg: &MmdConfig,
) -> Result<SmiaMSolution> {
    for (name, m) in [("member", x_t), ("non-member", x_v), ("audit", x_f)] {
        if m.n() > cfg.max_rows {
            return Err(AuditError::TooLarge(format!(
                "{name} set has {} rows; Gram computation is capped at {}",
                m.n(),
                cfg.max_rows
            )));
        }
    }
    let k = resolve_bandwidth(k, x_t, x_v)?;
    smia_m_alpha(&embedding_geometry(x_t, x_v, x_f, &k)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_gaussian, gen_mixture, GaussianPopulationSpec};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn col(v: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_column(v).unwrap()
    }

    fn gaussian(mu: f64, n: usize, seed: u64) -> FeatureMatrix {
        gen_gaussian(&GaussianPopulationSpec {
            mu: vec![mu, mu],
            sigma: DMatrix::identity(2, 2),
            n,
            seed,
        })
        .unwrap()
    }

    fn all_families() -> Vec<KernelSpec> {
        vec![
            KernelSpec::rbf(1.3),
            KernelSpec::laplacian(0.7),
            KernelSpec::polynomial(1.0, 3),
            KernelSpec::rational_quadratic(1.1, 0.8),
        ]
    }

    #[test]
    fn kernel_values() {
        let x = [0.3, -1.0];
        assert_eq!(kernel_eval(&KernelSpec::rbf(0.1), &x, &x).unwrap(), 1.0);
        let v = kernel_eval(&KernelSpec::rbf(1.0), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
        assert_eq!(kernel_eval(&KernelSpec::polynomial(1.0, 2), &[1.0, 0.0], &[1.0, 1.0]).unwrap(), 4.0);
        let rq = kernel_eval(&KernelSpec::rational_quadratic(1.0, 1.0), &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((rq - 0.5).abs() < 1e-15);
        let lap = kernel_eval(&KernelSpec::laplacian(2.0), &[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert!((lap - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn kernel_errors() {
        assert!(matches!(
            kernel_eval(&KernelSpec::rbf(1.0), &[0.0], &[0.0, 1.0]),
            Err(AuditError::DimMismatch(_))
        ));
        for bad in [
            KernelSpec::rbf(0.0),
            KernelSpec::rbf(-1.0),
            KernelSpec { sigma: None, ..KernelSpec::rbf(1.0) },
            KernelSpec::polynomial(-1.0, 2),
            KernelSpec::polynomial(1.0, 0),
            KernelSpec::rational_quadratic(1.0, 0.0),
        ] {
            assert!(matches!(kernel_eval(&bad, &[0.0], &[1.0]), Err(AuditError::InvalidParam(_))));
        }
        // unused parameters are ignored
        let poly = KernelSpec { sigma: Some(-5.0), ..KernelSpec::polynomial(0.0, 1) };
        assert_eq!(kernel_eval(&poly, &[2.0], &[3.0]).unwrap(), 6.0);
    }

    #[test]
    fn median_heuristic_examples() {
        assert_eq!(median_heuristic(&col(&[0.0]), &col(&[3.0])).unwrap(), 3.0);
        assert_eq!(median_heuristic(&col(&[0.0, 1.0]), &col(&[3.0])).unwrap(), 2.0);
        // distances {1,2,3,1,2,1}: sorted 1,1,1,2,2,3 -> lower middle is 1
        assert_eq!(median_heuristic(&col(&[0.0, 1.0]), &col(&[2.0, 3.0])).unwrap(), 1.0);
        assert!(matches!(
            median_heuristic(&col(&[2.0, 2.0]), &col(&[2.0])),
            Err(AuditError::AllPointsIdentical)
        ));
    }

    #[test]
    fn mmd_hand_expansions() {
        let lin = KernelSpec::linear();
        assert_eq!(mmd2_biased(&col(&[0.0]), &col(&[2.0]), &lin).unwrap(), 4.0);
        let x = col(&[0.0, 1.0]);
        assert_eq!(mmd2_unbiased(&x, &x, &lin).unwrap(), -0.5);
        assert_eq!(mmd2_biased(&x, &x, &lin).unwrap(), 0.0);
        assert!(matches!(
            mmd2_unbiased(&col(&[0.0]), &x, &lin),
            Err(AuditError::TooFewSamples { .. })
        ));
    }

    #[test]
    fn identical_multisets_have_zero_biased_mmd() {
        let x = gaussian(0.0, 40, 1);
        let mut idx: Vec<usize> = (0..40).collect();
        idx.reverse();
        let y = x.select_rows(&idx).unwrap();
        for k in all_families() {
            let v = mmd2_biased(&x, &y, &k).unwrap();
            assert!(v.abs() < 1e-12, "{k:?}: {v}");
        }
    }

    #[test]
    fn geometry_endpoints() {
        let t = gaussian(0.0, 30, 1);
        let v = gaussian(2.0, 30, 2);
        let k = KernelSpec::rbf(1.0);
        let g = embedding_geometry(&t, &v, &t, &k).unwrap();
        assert_eq!(g.ff, g.tt);
        assert!((g.tf - g.tt).abs() < 1e-15);
        assert_eq!(smia_m_alpha(&g).unwrap().alpha, 0.0);
        let g = embedding_geometry(&t, &v, &v, &k).unwrap();
        let sol = smia_m_alpha(&g).unwrap();
        assert!((sol.alpha - 1.0).abs() < 1e-12);
        let g = embedding_geometry(&t, &t, &v, &k).unwrap();
        assert!(matches!(smia_m_alpha(&g), Err(AuditError::DegenerateEmbeddings(_))));
    }

    #[test]
    fn linear_kernel_point_masses() {
        let t = col(&[0.0; 4]);
        let v = col(&[4.0; 4]);
        let f = col(&[0.0, 0.0, 0.0, 4.0]);
        let sol = smia_m_point_estimate(&t, &v, &f, &KernelSpec::linear(), &MmdConfig::default()).unwrap();
        assert_eq!(sol.alpha, 0.25);
        // linear kernel blocks are products of means
        let f = col(&[-1.0, 3.0]);
        let g = embedding_geometry(&t, &v, &f, &KernelSpec::linear()).unwrap();
        assert_eq!((g.tt, g.vv, g.tv, g.tf, g.vf), (0.0, 16.0, 0.0, 0.0, 4.0));
        assert_eq!(g.ff, 1.0);
        assert_eq!(smia_m_alpha(&g).unwrap().alpha, 0.25);
    }

    #[test]
    fn rows_cap_is_enforced() {
        let t = gaussian(0.0, 10, 1);
        let cfg = MmdConfig { max_rows: 5 };
        assert!(matches!(
            smia_m_point_estimate(&t, &t, &t, &KernelSpec::rbf(1.0), &cfg),
            Err(AuditError::TooLarge(_))
        ));
    }

    #[test]
    fn synthetic_mixture_with_median_heuristic() {
        let t = gaussian(0.0, 1000, 1);
        let v = gaussian(3.0, 1000, 2);
        let (f, _) = gen_mixture(&gaussian(0.0, 1000, 3), &gaussian(3.0, 1000, 4), 0.3, 1000, 5).unwrap();
        let k = KernelSpec::default();
        let sol = smia_m_point_estimate(&t, &v, &f, &k, &MmdConfig::default()).unwrap();
        assert!((sol.alpha - 0.3).abs() <= 0.03, "{}", sol.alpha);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let t = gaussian(0.0, 120, 1);
        let v = gaussian(1.0, 90, 2);
        let k = KernelSpec::rbf(1.0);
        let a = mmd2_unbiased(&t, &v, &k).unwrap();
        let b = par::sequential(|| mmd2_unbiased(&t, &v, &k).unwrap());
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn gram_matrices_positive_semidefinite() {
        for seed in 0..20u64 {
            let n = 2 + (seed as usize % 7);
            let x = gen_gaussian(&GaussianPopulationSpec {
                mu: vec![0.0; 3],
                sigma: DMatrix::identity(3, 3) * 2.0,
                n,
                seed,
            })
            .unwrap();
            for k in [KernelSpec::rbf(0.9), KernelSpec::laplacian(1.5), KernelSpec::rational_quadratic(0.8, 2.0)] {
                let kr = k.resolve().unwrap();
                let gram = DMatrix::from_fn(n, n, |i, j| kr.eval(x.row(i), x.row(j)));
                let min = gram.symmetric_eigenvalues().min();
                assert!(min >= -1e-8, "{k:?} seed {seed}: {min}");
            }
        }
    }

    /// Triple-loop oracle, straight from the estimator definitions.
    fn oracle(x: &FeatureMatrix, y: &FeatureMatrix, k: &KernelSpec, unbiased: bool) -> f64 {
        let k = k.resolve().unwrap();
        let (n, m) = (x.n() as f64, y.n() as f64);
        let mut xx = 0.0;
        let mut yy = 0.0;
        let mut xy = 0.0;
        for i in 0..x.n() {
            for j in 0..x.n() {
                if !(unbiased && i == j) {
                    xx += k.eval(x.row(i), x.row(j));
                }
            }
        }
        for i in 0..y.n() {
            for j in 0..y.n() {
                if !(unbiased && i == j) {
                    yy += k.eval(y.row(i), y.row(j));
                }
            }
        }
        for i in 0..x.n() {
            for j in 0..y.n() {
                xy += k.eval(x.row(i), y.row(j));
            }
        }
        if unbiased {
            xx / (n * (n - 1.0)) + yy / (m * (m - 1.0)) - 2.0 * xy / (n * m)
        } else {
            xx / (n * n) + yy / (m * m) - 2.0 * xy / (n * m)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn mmd_matches_triple_loop(seed: u64, n in 2usize..25, m in 2usize..25, shift in -2.0f64..2.0) {
            let x = gaussian(0.0, n, seed);
            let y = gaussian(shift, m, seed.wrapping_add(1));
            for k in all_families() {
                let b = mmd2_biased(&x, &y, &k).unwrap();
                let ob = oracle(&x, &y, &k, false);
                prop_assert!((b - ob.max(0.0)).abs() <= 1e-10 * (1.0 + ob.abs()));
                let u = mmd2_unbiased(&x, &y, &k).unwrap();
                prop_assert!((u - oracle(&x, &y, &k, true)).abs() <= 1e-10 * (1.0 + u.abs()));
                prop_assert_eq!(b.to_bits(), mmd2_biased(&y, &x, &k).unwrap().to_bits());
                prop_assert_eq!(u.to_bits(), mmd2_unbiased(&y, &x, &k).unwrap().to_bits());
            }
        }

        #[test]
        fn gram_blocks_reproduce_mmd(seed: u64, n in 1usize..20, m in 1usize..20) {
            let t = gaussian(0.0, n, seed);
            let v = gaussian(1.0, m, seed.wrapping_add(3));
            let f = gaussian(0.5, 7, seed.wrapping_add(4));
            for k in all_families() {
                let g = embedding_geometry(&t, &v, &f, &k).unwrap();
                let mmd = mmd2_biased(&t, &v, &k).unwrap();
                prop_assert!((mmd - (g.tt + g.vv - 2.0 * g.tv).max(0.0)).abs() <= 1e-10 * (1.0 + mmd));
                prop_assert!(g.tt >= -1e-10 && g.vv >= -1e-10 && g.ff >= -1e-10);
            }
        }

        #[test]
        fn closed_form_is_grid_argmin(seed: u64, shift in 0.2f64..3.0, truth in 0.0f64..1.0, sigma in 0.3f64..3.0) {
            let t = gaussian(0.0, 15, seed);
            let v = gaussian(shift, 15, seed.wrapping_add(1));
            let (f, _) = gen_mixture(&t, &v, truth, 20, seed).unwrap();
            let g = embedding_geometry(&t, &v, &f, &KernelSpec::rbf(sigma)).unwrap();
            let sol = smia_m_alpha(&g).unwrap();
            let mut best = (0.0, g.objective(0.0));
            for i in 1..=10_000 {
                let a = i as f64 / 10_000.0;
                let o = g.objective(a);
                if o < best.1 { best = (a, o); }
            }
            prop_assert!((sol.alpha - best.0).abs() <= 1e-4 + 1e-12);
            prop_assert!(g.objective(sol.alpha) <= best.1 + 1e-12);
        }

        #[test]
        fn audit_equal_to_members_gives_zero_for_any_bandwidth(seed: u64, sigma in 0.05f64..20.0) {
            let t = gaussian(0.0, 12, seed);
            let v = gaussian(1.5, 12, seed.wrapping_add(1));
            let sol = smia_m_point_estimate(&t, &v, &t, &KernelSpec::rbf(sigma), &MmdConfig::default()).unwrap();
            prop_assert_eq!(sol.alpha, 0.0);
        }
    }
}
