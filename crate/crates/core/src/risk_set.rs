//! Weighted at-risk step functions over sorted residuals.
//!
//! For a parameter θ and weights W the engine sorts the residuals
//! ε_j = y_j − θ·z_j once, groups ties, and accumulates suffix sums
//!
//! ```text
//! d0[k] = (1/n) Σ_j W_j 1(ε_j ≥ t_k)
//! d1[k] = (1/n) Σ_j W_j 1(ε_j ≥ t_k) z_j
//! ```
//!
//! so that both step functions, the at-risk covariate mean and the Gehan
//! weight can be read at any `t` with one binary search.

use crate::data::{Cohort, DEFAULT_MIN_RISK_WEIGHT};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_theta(cohort: &Cohort, theta: &[f64]) -> Result<()> {
    if theta.len() != cohort.dim() {
        return Err(Error::DimensionMismatch {
            expected: cohort.dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("theta"));
    }
    Ok(())
}

/// Residuals y − θ·z; `None` for subjects whose covariates are unobserved.
pub fn compute_residuals(cohort: &Cohort, theta: &[f64]) -> Result<Vec<Option<f64>>> {
    check_theta(cohort, theta)?;
    Ok(cohort
        .subjects()
        .iter()
        .map(|s| s.observed.then(|| s.y - dot(theta, &s.z)))
        .collect())
}

/// Residuals for every subject without the observation check. Entries of
/// unobserved subjects are meaningless; callers only read weighted subjects.
pub(crate) fn raw_residuals(cohort: &Cohort, theta: &[f64]) -> Vec<f64> {
    cohort
        .subjects()
        .iter()
        .map(|s| s.y - dot(theta, &s.z))
        .collect()
}

pub(crate) fn check_weights(cohort: &Cohort, w: &[f64]) -> Result<f64> {
    if w.len() != cohort.len() {
        return Err(Error::DimensionMismatch {
            expected: cohort.len(),
            got: w.len(),
        });
    }
    let mut total = 0.0;
    for (index, (&wi, s)) in w.iter().zip(cohort.subjects()).enumerate() {
        if !(wi >= 0.0) || !wi.is_finite() {
            return Err(Error::InvalidWeight { index, value: wi });
        }
        if wi > 0.0 && !s.observed {
            return Err(Error::UnobservedCovariate { index });
        }
        total += wi;
    }
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    Ok(total)
}

/// Step functions D⁽⁰⁾ and D⁽¹⁾ over the distinct weighted residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskSetStats {
    sorted_residuals: Vec<f64>,
    d0: Vec<f64>,
    /// Row-major, one row of length `dim` per tie group.
    d1: Vec<f64>,
    dim: usize,
    sum_w: f64,
    n: usize,
    min_risk_weight: f64,
}

impl RiskSetStats {
    /// Builds the step functions from precomputed residuals. Only subjects
    /// with positive weight are read.
    pub(crate) fn build(
        cohort: &Cohort,
        residuals: &[f64],
        w: &[f64],
        min_risk_weight: f64,
    ) -> Self {
        let n = cohort.len();
        let dim = cohort.dim();
        let nf = n as f64;
        let mut order: Vec<usize> = (0..n).filter(|&j| w[j] > 0.0).collect();
        order.sort_unstable_by(|&a, &b| residuals[a].total_cmp(&residuals[b]));

        let mut sorted_residuals = Vec::new();
        let mut group_w = Vec::new();
        let mut group_wz: Vec<f64> = Vec::new();
        for &j in &order {
            let e = residuals[j];
            if sorted_residuals.last() != Some(&e) {
                sorted_residuals.push(e);
                group_w.push(0.0);
                group_wz.extend(std::iter::repeat_n(0.0, dim));
            }
            let g = sorted_residuals.len() - 1;
            group_w[g] += w[j];
            let z = &cohort.subjects()[j].z;
            for (acc, &zc) in group_wz[g * dim..(g + 1) * dim].iter_mut().zip(z) {
                *acc += w[j] * zc;
            }
        }

        let groups = sorted_residuals.len();
        let mut d0 = vec![0.0; groups];
        let mut d1 = vec![0.0; groups * dim];
        let mut acc0 = 0.0;
        let mut acc1 = vec![0.0; dim];
        for g in (0..groups).rev() {
            acc0 += group_w[g];
            d0[g] = acc0 / nf;
            for c in 0..dim {
                acc1[c] += group_wz[g * dim + c];
                d1[g * dim + c] = acc1[c] / nf;
            }
        }
        Self {
            sorted_residuals,
            d0,
            d1,
            dim,
            sum_w: acc0 / nf,
            n,
            min_risk_weight,
        }
    }

    pub fn with_min_risk_weight(mut self, min_risk_weight: f64) -> Self {
        self.min_risk_weight = min_risk_weight;
        self
    }

    pub fn sorted_residuals(&self) -> &[f64] {
        &self.sorted_residuals
    }

    pub fn d0(&self) -> &[f64] {
        &self.d0
    }

    /// D⁽¹⁾ of tie group `k`.
    pub fn d1_row(&self, k: usize) -> &[f64] {
        &self.d1[k * self.dim..(k + 1) * self.dim]
    }

    /// Σ W_j / n.
    pub fn sum_w(&self) -> f64 {
        self.sum_w
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn min_risk_weight(&self) -> f64 {
        self.min_risk_weight
    }

    /// Index of the first tie group whose residual is ≥ `t`; equals the
    /// number of groups when the risk set is empty.
    #[inline]
    pub fn group_at(&self, t: f64) -> usize {
        self.sorted_residuals.partition_point(|&e| e < t)
    }

    pub fn d0_at(&self, t: f64) -> f64 {
        self.d0.get(self.group_at(t)).copied().unwrap_or(0.0)
    }

    pub fn d1_at(&self, t: f64) -> Vec<f64> {
        let k = self.group_at(t);
        if k < self.d0.len() {
            self.d1_row(k).to_vec()
        } else {
            vec![0.0; self.dim]
        }
    }

    /// Whether the risk set of group `k` has usable weight.
    #[inline]
    pub(crate) fn nonempty(&self, k: usize) -> bool {
        k < self.d0.len() && self.d0[k] > self.min_risk_weight
    }

    /// Weighted at-risk covariate mean D⁽¹⁾(t)/D⁽⁰⁾(t).
    pub fn eta_hat(&self, t: f64) -> Result<Vec<f64>> {
        let k = self.group_at(t);
        if !self.nonempty(k) {
            return Err(Error::EmptyRiskSet { t });
        }
        let d0 = self.d0[k];
        Ok(self.d1_row(k).iter().map(|v| v / d0).collect())
    }

    /// Gehan-type weight D⁽⁰⁾(t)/(ΣW/n), in [0, 1].
    pub fn rho_hat(&self, t: f64) -> f64 {
        (self.d0_at(t) / self.sum_w).min(1.0)
    }
}

pub fn risk_stats(cohort: &Cohort, w: &[f64], theta: &[f64]) -> Result<RiskSetStats> {
    check_theta(cohort, theta)?;
    check_weights(cohort, w)?;
    let residuals = raw_residuals(cohort, theta);
    Ok(RiskSetStats::build(
        cohort,
        &residuals,
        w,
        DEFAULT_MIN_RISK_WEIGHT,
    ))
}

/// Direct double-loop evaluation of (D⁽⁰⁾(t), D⁽¹⁾(t)).
pub fn brute_force_risk_stats(
    cohort: &Cohort,
    w: &[f64],
    theta: &[f64],
    t: f64,
) -> Result<(f64, Vec<f64>)> {
    check_theta(cohort, theta)?;
    check_weights(cohort, w)?;
    let nf = cohort.len() as f64;
    let mut d0 = 0.0;
    let mut d1 = vec![0.0; cohort.dim()];
    for (s, &wj) in cohort.subjects().iter().zip(w) {
        if wj == 0.0 {
            continue;
        }
        let e = s.y - dot(theta, &s.z);
        if e >= t {
            d0 += wj;
            for (acc, &zc) in d1.iter_mut().zip(&s.z) {
                *acc += wj * zc;
            }
        }
    }
    Ok((d0 / nf, d1.into_iter().map(|v| v / nf).collect()))
}
