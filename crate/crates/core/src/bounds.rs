//! Calculators for the auditing error bounds.
//!
//! With probability at least 1 − δ over m samples, the risk on the audited
//! distribution is bounded by
//!
//! ```text
//! R_S + sqrt((2/m)(χ²(Q‖P) + 1) log(1/δ)) + sqrt(D_∞(D_t‖D_f) / 2)
//! ```
//!
//! where the middle term is the statistical error and the last one is the
//! auditing error caused by the shift between the member distribution and
//! the audited one. Divergences are evaluated on finite supports.

use crate::error::{AuditError, Result};

/// Probability vector on a finite support.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    probs: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(AuditError::EmptyList);
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(AuditError::InvalidRange(format!("probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(AuditError::InvalidRange(format!("probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

fn same_support(a: &DiscreteDistribution, b: &DiscreteDistribution) -> Result<()> {
    if a.probs.len() != b.probs.len() {
        return Err(AuditError::DimMismatch(format!(
            "supports of size {} and {}",
            a.probs.len(),
            b.probs.len()
        )));
    }
    Ok(())
}

/// `Σ (qᵢ − pᵢ)² / pᵢ`; infinite when q puts mass where p has none.
pub fn chi2_divergence(q: &DiscreteDistribution, p: &DiscreteDistribution) -> Result<f64> {
    same_support(q, p)?;
    let mut total = 0.0;
    for (&qi, &pi) in q.probs.iter().zip(&p.probs) {
        if pi > 0.0 {
            total += (qi - pi) * (qi - pi) / pi;
        } else if qi > 0.0 {
            return Ok(f64::INFINITY);
        }
    }
    Ok(total)
}

/// `log max dtᵢ / dfᵢ` over the support of dt.
pub fn renyi_inf_divergence(dt: &DiscreteDistribution, df: &DiscreteDistribution) -> Result<f64> {
    same_support(dt, df)?;
    let mut max_ratio: f64 = 0.0;
    for (&t, &f) in dt.probs.iter().zip(&df.probs) {
        if t > 0.0 {
            if f == 0.0 {
                return Ok(f64::INFINITY);
            }
            max_ratio = max_ratio.max(t / f);
        }
    }
    Ok(max_ratio.ln())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(AuditError::InvalidRange(format!("delta = {delta} must lie in (0, 1]")));
    }
    Ok(())
}

/// `sqrt((2/m)(χ² + 1) log(1/δ))`.
pub fn statistical_error_term(chi2: f64, m: u64, delta: f64) -> Result<f64> {
    if !(chi2 >= 0.0) {
        return Err(AuditError::InvalidRange(format!("chi2 = {chi2} must be nonnegative")));
    }
    if m == 0 {
        return Err(AuditError::InvalidRange("sample count m must be positive".into()));
    }
    check_delta(delta)?;
    // δ = 1 is admitted as the limit where the log term vanishes
    let log_term = (-delta.ln()).max(0.0);
    Ok((2.0 / m as f64 * (chi2 + 1.0) * log_term).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    /// Empirical risk on the sample, in [0, 1].
    pub empirical_risk: f64,
    pub chi2: f64,
    pub m: u64,
    pub delta: f64,
    /// Rényi-∞ divergence between member and audited distributions.
    pub d_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditingBound {
    pub statistical_error: f64,
    pub auditing_error: f64,
    /// Risk bound without the distribution-shift term.
    pub in_distribution: f64,
    pub total: f64,
}

pub fn auditing_bound(b: &BoundInputs) -> Result<AuditingBound> {
    if !(0.0..=1.0).contains(&b.empirical_risk) {
        return Err(AuditError::InvalidRange(format!(
            "empirical risk {} must lie in [0, 1]",
            b.empirical_risk
        )));
    }
    if !(b.d_inf >= 0.0) {
        return Err(AuditError::InvalidRange(format!("d_inf = {} must be nonnegative", b.d_inf)));
    }
    let statistical_error = statistical_error_term(b.chi2, b.m, b.delta)?;
    let auditing_error = (b.d_inf / 2.0).sqrt();
    let in_distribution = b.empirical_risk + statistical_error;
    Ok(AuditingBound {
        statistical_error,
        auditing_error,
        in_distribution,
        total: in_distribution + auditing_error,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TnrPoint {
    pub tnr: f64,
    /// False when the unclamped TNR left [0, 1].
    pub feasible: bool,
    pub unclamped: f64,
}

/// TNR implied by overall accuracy and TPR when a fraction `p_nonmember`
/// of the evaluated samples are non-members:
/// `accuracy = (1 − p)·tpr + p·tnr`.
pub fn tnr_curve(accuracy: f64, tpr: f64, p_nonmember: f64) -> Result<TnrPoint> {
    for (name, v) in [("accuracy", accuracy), ("tpr", tpr), ("p_nonmember", p_nonmember)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(AuditError::InvalidRange(format!("{name} = {v} must lie in (0, 1]")));
        }
    }
    let unclamped = (accuracy - (1.0 - p_nonmember) * tpr) / p_nonmember;
    Ok(TnrPoint {
        tnr: unclamped.clamp(0.0, 1.0),
        feasible: (0.0..=1.0).contains(&unclamped),
        unclamped,
    })
}
