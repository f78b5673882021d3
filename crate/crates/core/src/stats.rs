//! Moment estimation, the mean-gap outer product, and outlier exclusion.

use nalgebra::{DMatrix, DVector};

use crate::error::{AuditError, Result};
use crate::matrix::FeatureMatrix;

/// Mean vector and covariance matrix of one population.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentStats {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
    /// Number of samples the moments were computed from.
    pub n: usize,
}

impl MomentStats {
    pub fn d(&self) -> usize {
        self.mu.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceDivisor {
    /// Divide by n. Makes the mixture pooling identity exact on finite samples.
    #[default]
    Population,
    /// Divide by n - 1.
    Sample,
}

/// Column means and divisor-n covariance, symmetrized.
pub fn estimate_moments(x: &FeatureMatrix) -> Result<MomentStats> {
    estimate_moments_with(x, CovarianceDivisor::Population)
}

pub fn estimate_moments_with(x: &FeatureMatrix, divisor: CovarianceDivisor) -> Result<MomentStats> {
    let (n, d) = (x.n(), x.d());
    if n == 0 {
        return Err(AuditError::EmptyMatrix);
    }
    let mut mu = DVector::zeros(d);
    for row in x.rows() {
        for (m, v) in mu.iter_mut().zip(row) {
            *m += v;
        }
    }
    mu /= n as f64;

    let mut sigma = DMatrix::zeros(d, d);
    let mut centered = vec![0.0; d];
    for row in x.rows() {
        for ((c, v), m) in centered.iter_mut().zip(row).zip(mu.iter()) {
            *c = v - m;
        }
        for j in 0..d {
            for i in 0..=j {
                sigma[(i, j)] += centered[i] * centered[j];
            }
        }
    }
    let denom = match divisor {
        CovarianceDivisor::Population => n as f64,
        CovarianceDivisor::Sample if n > 1 => (n - 1) as f64,
        CovarianceDivisor::Sample => {
            return Err(AuditError::TooFewSamples { needed: 2, got: n });
        }
    };
    for j in 0..d {
        for i in 0..=j {
            let v = sigma[(i, j)] / denom;
            sigma[(i, j)] = v;
            sigma[(j, i)] = v;
        }
    }
    Ok(MomentStats { mu, sigma, n })
}

/// Outer product of the mean gap, `(mu_v - mu_t)(mu_v - mu_t)^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanGapOuter {
    pub delta2: DMatrix<f64>,
}

pub fn mean_gap_outer(mu_v: &DVector<f64>, mu_t: &DVector<f64>) -> Result<MeanGapOuter> {
    if mu_v.len() != mu_t.len() {
        return Err(AuditError::DimMismatch(format!(
            "mean vectors of length {} and {}",
            mu_v.len(),
            mu_t.len()
        )));
    }
    let gap = mu_v - mu_t;
    Ok(MeanGapOuter {
        delta2: &gap * gap.transpose(),
    })
}

const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_Z_THRESHOLD: f64 = 6.0;

/// Drop rows with any coordinate more than `z_threshold` reference standard
/// deviations from the reference mean. Survivors keep their original order;
/// the second element lists removed row indices.
pub fn filter_outliers(
    x: &FeatureMatrix,
    reference: &MomentStats,
    z_threshold: f64,
) -> Result<(FeatureMatrix, Vec<usize>)> {
    if !(z_threshold > 0.0) {
        return Err(AuditError::InvalidParam(format!(
            "z_threshold must be positive, got {z_threshold}"
        )));
    }
    if reference.n < 2 {
        return Err(AuditError::TooFewSamples {
            needed: 2,
            got: reference.n,
        });
    }
    if reference.d() != x.d() {
        return Err(AuditError::DimMismatch(format!(
            "reference has dimension {}, matrix has {}",
            reference.d(),
            x.d()
        )));
    }
    let scale: Vec<f64> = (0..x.d())
        .map(|j| (reference.sigma[(j, j)] + VARIANCE_FLOOR).sqrt())
        .collect();
    let mut keep = Vec::with_capacity(x.n());
    let mut removed = Vec::new();
    for (i, row) in x.rows().enumerate() {
        let outlier = row
            .iter()
            .zip(reference.mu.iter())
            .zip(&scale)
            .any(|((v, m), s)| (v - m).abs() / s > z_threshold);
        if outlier {
            removed.push(i);
        } else {
            keep.push(i);
        }
    }
    if keep.is_empty() {
        return Err(AuditError::AllRowsRemoved);
    }
    Ok((x.select_rows(&keep)?, removed))
}
