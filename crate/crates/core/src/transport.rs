//! Entropy-regularized optimal transport and the Wasserstein estimator.
//!
//! [`sinkhorn`] runs Sinkhorn-Knopp scaling on a cost matrix and returns the
//! transport cost `Σ γᵢⱼ Cᵢⱼ` of the regularized plan (without the entropy
//! term; the entropy is reported separately). [`exact_ot_small`] enumerates
//! permutations and serves as ground truth for small uniform problems.

use nalgebra::DMatrix;

use crate::error::{AuditError, Result};
use crate::matrix::{check_same_dim, sq_dist, FeatureMatrix};
use crate::par;

/// `C[i][j] = ‖xᵢ − yⱼ‖₂^p`.
pub fn cost_matrix(x: &FeatureMatrix, y: &FeatureMatrix, p: u32) -> Result<DMatrix<f64>> {
    Ok(CostGrid::new(x, y, p)?.to_matrix())
}

/// Row-major cost matrix plus its transpose, so both scaling passes walk
/// contiguous memory.
#[derive(Debug, Clone)]
struct CostGrid {
    rows: Vec<f64>,
    cols: Vec<f64>,
    n: usize,
    m: usize,
}

impl CostGrid {
    fn new(x: &FeatureMatrix, y: &FeatureMatrix, p: u32) -> Result<Self> {
        check_same_dim(x, y)?;
        if p == 0 {
            return Err(AuditError::InvalidParam("cost exponent p must be positive".into()));
        }
        let (n, m) = (x.n(), y.n());
        let per_row = par::map_range(n, |i| {
            let xi = x.row(i);
            y.rows()
                .map(|yj| {
                    let d2 = sq_dist(xi, yj);
                    match p {
                        1 => d2.sqrt(),
                        2 => d2,
                        _ => d2.sqrt().powi(p as i32),
                    }
                })
                .collect::<Vec<_>>()
        });
        let rows: Vec<f64> = per_row.into_iter().flatten().collect();
        Ok(Self::from_row_major(rows, n, m))
    }

    fn from_row_major(rows: Vec<f64>, n: usize, m: usize) -> Self {
        let mut cols = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                cols[j * n + i] = rows[i * m + j];
            }
        }
        Self { rows, cols, n, m }
    }

    fn from_matrix(c: &DMatrix<f64>) -> Self {
        let (n, m) = c.shape();
        let rows = (0..n).flat_map(|i| (0..m).map(move |j| c[(i, j)])).collect();
        Self::from_row_major(rows, n, m)
    }

    fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.m, &self.rows)
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.m..(i + 1) * self.m]
    }

    #[inline]
    fn col(&self, j: usize) -> &[f64] {
        &self.cols[j * self.n..(j + 1) * self.n]
    }

    /// Lower median of the entries, falling back to the lower median of the
    /// positive entries when at least half the entries are zero.
    fn median_scale(&self) -> f64 {
        let lower_median = |mut v: Vec<f64>| -> Option<f64> {
            if v.is_empty() {
                return None;
            }
            let mid = (v.len() - 1) / 2;
            Some(*v.select_nth_unstable_by(mid, f64::total_cmp).1)
        };
        match lower_median(self.rows.clone()) {
            Some(med) if med > 0.0 => med,
            _ => lower_median(self.rows.iter().copied().filter(|&c| c > 0.0).collect()).unwrap_or(1.0),
        }
    }
}

/// How the regularization strength is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Fixed(f64),
    /// `factor × median(C)`, resolved per cost matrix.
    MedianScaled(f64),
}

impl Epsilon {
    fn resolve(self, cost: &CostGrid) -> Result<f64> {
        let eps = match self {
            Epsilon::Fixed(e) => e,
            Epsilon::MedianScaled(f) => f * cost.median_scale(),
        };
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(AuditError::InvalidParam(format!("epsilon must be positive, got {eps}")));
        }
        Ok(eps)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    /// Cost exponent.
    pub p: u32,
    pub max_iters: usize,
    /// Stop once the largest marginal violation is at most this.
    pub tol: f64,
    pub log_domain: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::MedianScaled(0.05),
            p: 2,
            max_iters: 1000,
            tol: 1e-6,
            log_domain: true,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(AuditError::InvalidParam(format!("tol must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(AuditError::InvalidParam("max_iters must be positive".into()));
        }
        if self.p == 0 {
            return Err(AuditError::InvalidParam("cost exponent p must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub gamma: DMatrix<f64>,
    pub cost: DMatrix<f64>,
    /// `Σ γᵢⱼ Cᵢⱼ`.
    pub w_eps: f64,
    /// `−Σ γᵢⱼ log γᵢⱼ`.
    pub entropy: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub converged: bool,
    pub max_marginal_violation: f64,
}

fn check_weights(w: &[f64], expected_len: usize, name: &str) -> Result<()> {
    if w.len() != expected_len {
        return Err(AuditError::DimMismatch(format!(
            "{name} has {} weights, cost matrix needs {expected_len}",
            w.len()
        )));
    }
    if let Some(bad) = w.iter().find(|&&x| !(x >= 0.0 && x.is_finite())) {
        return Err(AuditError::NonProbabilityWeights(format!("{name} contains {bad}")));
    }
    let total: f64 = w.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(AuditError::NonProbabilityWeights(format!("{name} sums to {total}")));
    }
    Ok(())
}

pub fn uniform_weights(n: usize) -> Vec<f64> {
    vec![1.0 / n as f64; n]
}

pub fn sinkhorn(a: &[f64], b: &[f64], c: &DMatrix<f64>, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    if c.iter().any(|v| !v.is_finite()) {
        return Err(AuditError::InvalidParam("cost matrix has non-finite entries".into()));
    }
    sinkhorn_grid(a, b, &CostGrid::from_matrix(c), cfg)
}

fn sinkhorn_grid(a: &[f64], b: &[f64], cost: &CostGrid, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    cfg.validate()?;
    check_weights(a, cost.n, "a")?;
    check_weights(b, cost.m, "b")?;
    let eps = cfg.epsilon.resolve(cost)?;
    let (gamma, iterations, converged) = if cfg.log_domain {
        log_domain(a, b, cost, eps, cfg)
    } else {
        linear_domain(a, b, cost, eps, cfg)?
    };
    Ok(finish(a, b, cost, gamma, eps, iterations, converged))
}

/// Scaling iterations on the Gibbs kernel `K = exp(−C/ε)`.
fn linear_domain(
    a: &[f64],
    b: &[f64],
    cost: &CostGrid,
    eps: f64,
    cfg: &SinkhornConfig,
) -> Result<(Vec<f64>, usize, bool)> {
    const FLOOR: f64 = 1e-300;
    let (n, m) = (cost.n, cost.m);
    let k_rows: Vec<f64> = cost.rows.iter().map(|c| (-c / eps).exp()).collect();
    let k_cols: Vec<f64> = cost.cols.iter().map(|c| (-c / eps).exp()).collect();
    let mut u = vec![0.0; n];
    let mut v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        par::fill(&mut kv, |i| dot_row(&k_rows[i * m..(i + 1) * m], &v));
        if iterations > 0 {
            // Row marginals of the previous iterate; columns are exact after
            // its v-update.
            let viol = (0..n).map(|i| (u[i] * kv[i] - a[i]).abs()).fold(0.0, f64::max);
            if viol <= cfg.tol && plan_violation(a, b, &linear_plan(&k_rows, &u, &v), n, m) <= cfg.tol {
                converged = true;
                break;
            }
        }
        for i in 0..n {
            if kv[i] < FLOOR {
                if a[i] == 0.0 {
                    u[i] = 0.0;
                    continue;
                }
                return Err(AuditError::NumericalUnderflow);
            }
            u[i] = a[i] / kv[i];
        }
        par::fill(&mut ktu, |j| dot_row(&k_cols[j * n..(j + 1) * n], &u));
        for j in 0..m {
            if ktu[j] < FLOOR {
                if b[j] == 0.0 {
                    v[j] = 0.0;
                    continue;
                }
                return Err(AuditError::NumericalUnderflow);
            }
            v[j] = b[j] / ktu[j];
        }
        iterations += 1;
    }
    Ok((linear_plan(&k_rows, &u, &v), iterations, converged))
}

fn linear_plan(k_rows: &[f64], u: &[f64], v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut gamma = k_rows.to_vec();
    for (i, ui) in u.iter().enumerate() {
        for (g, vj) in gamma[i * m..(i + 1) * m].iter_mut().zip(v) {
            *g *= ui * vj;
        }
    }
    gamma
}

/// Largest deviation of the plan's row and column sums from `a` and `b`.
fn plan_violation(a: &[f64], b: &[f64], gamma: &[f64], n: usize, m: usize) -> f64 {
    let mut col_sums = vec![0.0; m];
    let mut viol: f64 = 0.0;
    for i in 0..n {
        let row = &gamma[i * m..(i + 1) * m];
        viol = viol.max((row.iter().sum::<f64>() - a[i]).abs());
        for (c, g) in col_sums.iter_mut().zip(row) {
            *c += g;
        }
    }
    col_sums.iter().zip(b).fold(viol, |acc, (c, bj)| acc.max((c - bj).abs()))
}

#[inline]
fn dot_row(k: &[f64], v: &[f64]) -> f64 {
    k.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// `log Σ exp(z_j)` with `z_j = (pot_j − c_j) / ε`.
#[inline]
fn log_sum_exp(pot: &[f64], c: &[f64], inv_eps: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for (p, cj) in pot.iter().zip(c) {
        let z = (p - cj) * inv_eps;
        if z > max {
            max = z;
        }
    }
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = pot
        .iter()
        .zip(c)
        .map(|(p, cj)| ((p - cj) * inv_eps - max).exp())
        .sum();
    max + s.ln()
}

/// Same iteration on dual potentials `f = ε log u`, `g = ε log v`.
fn log_domain(a: &[f64], b: &[f64], cost: &CostGrid, eps: f64, cfg: &SinkhornConfig) -> (Vec<f64>, usize, bool) {
    let (n, m) = (cost.n, cost.m);
    let inv_eps = 1.0 / eps;
    let log_a: Vec<f64> = a.iter().map(|x| x.ln()).collect();
    let log_b: Vec<f64> = b.iter().map(|x| x.ln()).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut lse_rows = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iters {
        par::fill(&mut lse_rows, |i| log_sum_exp(&g, cost.row(i), inv_eps));
        if iterations > 0 {
            let viol = (0..n)
                .map(|i| ((f[i] * inv_eps + lse_rows[i]).exp() - a[i]).abs())
                .fold(0.0, f64::max);
            // Confirm on the materialized plan, which is what gets reported.
            if viol <= cfg.tol && plan_violation(a, b, &log_plan(&f, &g, cost, inv_eps), n, m) <= cfg.tol {
                converged = true;
                break;
            }
        }
        for i in 0..n {
            f[i] = if a[i] == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * (log_a[i] - lse_rows[i])
            };
        }
        par::fill(&mut g, |j| {
            if b[j] == 0.0 {
                f64::NEG_INFINITY
            } else {
                eps * (log_b[j] - log_sum_exp(&f, cost.col(j), inv_eps))
            }
        });
        iterations += 1;
    }
    (log_plan(&f, &g, cost, inv_eps), iterations, converged)
}

fn log_plan(f: &[f64], g: &[f64], cost: &CostGrid, inv_eps: f64) -> Vec<f64> {
    let m = g.len();
    let mut gamma = vec![0.0; f.len() * m];
    for (i, fi) in f.iter().enumerate() {
        for j in 0..m {
            let z = (fi + g[j] - cost.rows[i * m + j]) * inv_eps;
            gamma[i * m + j] = if z.is_nan() { 0.0 } else { z.exp() };
        }
    }
    gamma
}

fn finish(
    a: &[f64],
    b: &[f64],
    cost: &CostGrid,
    gamma: Vec<f64>,
    epsilon: f64,
    iterations: usize,
    converged: bool,
) -> TransportPlan {
    let (n, m) = (cost.n, cost.m);
    let mut w_eps = 0.0;
    let mut entropy = 0.0;
    for (g, c) in gamma.iter().zip(&cost.rows) {
        w_eps += g * c;
        if *g > 0.0 {
            entropy -= g * g.ln();
        }
    }
    let viol = plan_violation(a, b, &gamma, n, m);
    TransportPlan {
        gamma: DMatrix::from_row_slice(n, m, &gamma),
        cost: cost.to_matrix(),
        w_eps,
        entropy,
        epsilon,
        iterations,
        converged,
        max_marginal_violation: viol,
    }
}

/// Regularized transport cost between two uniformly weighted point sets.
pub fn wasserstein_eps(x: &FeatureMatrix, y: &FeatureMatrix, cfg: &SinkhornConfig) -> Result<TransportPlan> {
    let cost = CostGrid::new(x, y, cfg.p)?;
    sinkhorn_grid(&uniform_weights(x.n()), &uniform_weights(y.n()), &cost, cfg)
}

pub const EXACT_OT_MAX: usize = 8;

/// `W_p^p` between uniform measures on equally sized sets, by enumerating
/// every permutation.
pub fn exact_ot_small(x: &FeatureMatrix, y: &FeatureMatrix, p: u32) -> Result<f64> {
    if x.n() != y.n() {
        return Err(AuditError::UnequalSizes(x.n(), y.n()));
    }
    if x.n() > EXACT_OT_MAX {
        return Err(AuditError::TooLarge(format!(
            "exhaustive transport is limited to {EXACT_OT_MAX} points, got {}",
            x.n()
        )));
    }
    let cost = CostGrid::new(x, y, p)?;
    let n = x.n();
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |perm: &[usize]| perm.iter().enumerate().map(|(i, &j)| cost.rows[i * n + j]).sum::<f64>();
    let mut best = total(&perm);
    // Heap's algorithm, iterative form.
    let mut stack = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if stack[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(stack[i], i);
            }
            best = best.min(total(&perm));
            stack[i] += 1;
            i = 1;
        } else {
            stack[i] = 0;
            i += 1;
        }
    }
    Ok(best / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WassersteinMode {
    /// `α = W(f, t) / W(v, t)`.
    #[default]
    Ratio,
    /// Recover `⟨A, B⟩` from the three pairwise distances.
    Polarization,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmiaWSolution {
    pub alpha: f64,
    pub unclamped: f64,
    pub w_ft: f64,
    pub w_vt: f64,
    pub w_fv: Option<f64>,
    /// Total Sinkhorn iterations over all solves.
    pub iterations: usize,
    /// Whether every solve met its tolerance.
    pub converged: bool,
    /// Regularization used for the reference pair `(v, t)`.
    pub epsilon_ref: f64,
}

const TRANSPORT_DEGENERACY: f64 = 1e-9;

pub fn smia_w_point_estimate(
    x_t: &FeatureMatrix,
    x_v: &FeatureMatrix,
    x_f: &FeatureMatrix,
    cfg: &SinkhornConfig,
    mode: WassersteinMode,
) -> Result<SmiaWSolution> {
    check_same_dim(x_t, x_v)?;
    check_same_dim(x_t, x_f)?;
    // The entropic cost of a set against itself is positive, so identical
    // populations are caught before solving.
    if x_t == x_v {
        return Err(AuditError::DegeneratePopulations);
    }
    let vt = wasserstein_eps(x_v, x_t, cfg)?;
    if vt.w_eps < TRANSPORT_DEGENERACY {
        return Err(AuditError::DegeneratePopulations);
    }
    let ft = wasserstein_eps(x_f, x_t, cfg)?;
    let mut iterations = vt.iterations + ft.iterations;
    let mut converged = vt.converged && ft.converged;
    let (unclamped, w_fv) = match mode {
        WassersteinMode::Ratio => (ft.w_eps / vt.w_eps, None),
        WassersteinMode::Polarization => {
            let fv = wasserstein_eps(x_f, x_v, cfg)?;
            iterations += fv.iterations;
            converged &= fv.converged;
            let (a2, b2, amb2) = (ft.w_eps.powi(2), vt.w_eps.powi(2), fv.w_eps.powi(2));
            ((a2 + b2 - amb2) / (2.0 * b2), Some(fv.w_eps))
        }
    };
    Ok(SmiaWSolution {
        alpha: unclamped.clamp(0.0, 1.0),
        unclamped,
        w_ft: ft.w_eps,
        w_vt: vt.w_eps,
        w_fv,
        iterations,
        converged,
        epsilon_ref: vt.epsilon,
    })
}
