//! The doubly weighted rank estimating function
//!
//! ```text
//! Ψ(θ) = (1/n) Σ_i Ω_i ρ(ε_i) (Z_i − η̂(ε_i)) Δ_i
//! ```
//!
//! with ρ ≡ 1 (logrank) or the weighted Gehan weight ρ̂, together with the
//! convex pairwise hinge loss whose gradient is the Gehan-weighted Ψ.

use serde::{Deserialize, Serialize};

use crate::data::{Cohort, DEFAULT_MIN_RISK_WEIGHT};
use crate::error::{Error, Result};
use crate::risk_set::{check_weights, dot, raw_residuals, RiskSetStats};
use crate::weights::{assign_weights, AlphaEstimate, WeightPlan, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RhoKind {
    Logrank,
    Gehan,
}

impl RhoKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RhoKind::Logrank => "logrank",
            RhoKind::Gehan => "gehan",
        }
    }
}

impl std::fmt::Display for RhoKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for RhoKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logrank" => Ok(RhoKind::Logrank),
            "gehan" => Ok(RhoKind::Gehan),
            other => Err(Error::InvalidArgument(format!("unknown weight function `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsiValue {
    pub psi: Vec<f64>,
    pub n_event_terms: usize,
    /// Event summands skipped because their risk set had no usable weight.
    pub n_dropped: usize,
}

/// A cohort paired with validated weights (Ω, W).
#[derive(Debug, Clone)]
pub struct WeightedCohort<'a> {
    cohort: &'a Cohort,
    omega: Vec<f64>,
    w: Vec<f64>,
    min_risk_weight: f64,
}

impl<'a> WeightedCohort<'a> {
    /// Checks lengths, signs, Σ W > 0, and that every subject entering an
    /// event term or a risk set has observed covariates.
    pub fn new(cohort: &'a Cohort, omega: Vec<f64>, w: Vec<f64>) -> Result<Self> {
        check_weights(cohort, &w)?;
        if omega.len() != cohort.len() {
            return Err(Error::DimensionMismatch {
                expected: cohort.len(),
                got: omega.len(),
            });
        }
        for (index, (&o, s)) in omega.iter().zip(cohort.subjects()).enumerate() {
            if !(o >= 0.0) || !o.is_finite() {
                return Err(Error::InvalidWeight { index, value: o });
            }
            if o > 0.0 && s.delta && !s.observed {
                return Err(Error::UnobservedCovariate { index });
            }
        }
        Ok(Self {
            cohort,
            omega,
            w,
            min_risk_weight: DEFAULT_MIN_RISK_WEIGHT,
        })
    }

    /// Unit weights.
    pub fn unweighted(cohort: &'a Cohort) -> Result<Self> {
        Self::new(cohort, vec![1.0; cohort.len()], vec![1.0; cohort.len()])
    }

    pub fn from_weights(cohort: &'a Cohort, weights: &Weights) -> Result<Self> {
        Self::new(cohort, weights.omega.clone(), weights.w.clone())
    }

    /// Assigns weights from `plan` and returns the fraction estimate used, if any.
    pub fn from_plan(cohort: &'a Cohort, plan: &WeightPlan) -> Result<(Self, Option<AlphaEstimate>)> {
        let weights = assign_weights(cohort, plan)?;
        let wc = Self::new(cohort, weights.omega, weights.w)?;
        Ok((wc, weights.alpha))
    }

    pub fn with_min_risk_weight(mut self, min_risk_weight: f64) -> Self {
        self.min_risk_weight = min_risk_weight;
        self
    }

    pub fn cohort(&self) -> &'a Cohort {
        self.cohort
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.cohort.len()
    }

    pub fn dim(&self) -> usize {
        self.cohort.dim()
    }

    pub fn min_risk_weight(&self) -> f64 {
        self.min_risk_weight
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta"));
        }
        Ok(())
    }

    /// Residuals y − θ·z for all subjects (entries of unweighted, unobserved
    /// subjects are never read).
    pub fn residuals(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(raw_residuals(self.cohort, theta))
    }

    pub fn risk_stats_at(&self, residuals: &[f64]) -> RiskSetStats {
        RiskSetStats::build(self.cohort, residuals, &self.w, self.min_risk_weight)
    }

    /// Whether subject `i` contributes an event term.
    #[inline]
    pub(crate) fn is_event_term(&self, i: usize) -> bool {
        self.cohort.subjects()[i].delta && self.omega[i] > 0.0
    }

    pub fn psi(&self, theta: &[f64], rho: RhoKind) -> Result<PsiValue> {
        let residuals = self.residuals(theta)?;
        let stats = self.risk_stats_at(&residuals);
        Ok(self.psi_with(&residuals, &stats, rho))
    }

    pub(crate) fn psi_with(&self, residuals: &[f64], stats: &RiskSetStats, rho: RhoKind) -> PsiValue {
        let d = self.dim();
        let mut acc = vec![0.0; d];
        let mut used = 0;
        let mut dropped = 0;
        let sum_w = stats.sum_w();
        for (i, s) in self.cohort.subjects().iter().enumerate() {
            if !self.is_event_term(i) {
                continue;
            }
            let k = stats.group_at(residuals[i]);
            if !stats.nonempty(k) {
                dropped += 1;
                continue;
            }
            used += 1;
            let d0 = stats.d0()[k];
            let d1 = stats.d1_row(k);
            let o = self.omega[i];
            match rho {
                RhoKind::Logrank => {
                    for c in 0..d {
                        acc[c] += o * (s.z[c] - d1[c] / d0);
                    }
                }
                RhoKind::Gehan => {
                    for c in 0..d {
                        acc[c] += o * (d0 * s.z[c] - d1[c]) / sum_w;
                    }
                }
            }
        }
        let nf = self.n() as f64;
        PsiValue {
            psi: acc.into_iter().map(|v| v / nf).collect(),
            n_event_terms: used,
            n_dropped: dropped,
        }
    }

    /// Pairwise double-loop form of the Gehan-weighted Ψ.
    pub fn psi_pairwise_oracle(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let residuals = self.residuals(theta)?;
        let subjects = self.cohort.subjects();
        let total_w: f64 = self.w.iter().sum();
        let mut acc = vec![0.0; self.dim()];
        for i in 0..self.n() {
            if !self.is_event_term(i) {
                continue;
            }
            for j in 0..self.n() {
                if self.w[j] == 0.0 || residuals[j] < residuals[i] {
                    continue;
                }
                let f = self.omega[i] * self.w[j];
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += f * (subjects[i].z[c] - subjects[j].z[c]);
                }
            }
        }
        let scale = self.n() as f64 * total_w;
        Ok(acc.into_iter().map(|v| v / scale).collect())
    }

    /// Convex loss (1/(n ΣW)) Σ_i Σ_j Ω_i W_j Δ_i (ε_j − ε_i)⁺ whose gradient
    /// is the Gehan-weighted Ψ.
    pub fn gehan_loss(&self, theta: &[f64]) -> Result<f64> {
        let residuals = self.residuals(theta)?;
        Ok(self.gehan_loss_with(&residuals))
    }

    fn gehan_loss_with(&self, residuals: &[f64]) -> f64 {
        let n = self.n();
        let mut order: Vec<usize> = (0..n).filter(|&j| self.w[j] > 0.0).collect();
        order.sort_unstable_by(|&a, &b| residuals[a].total_cmp(&residuals[b]));
        // Suffix sums over the weighted residuals in sorted order.
        let m = order.len();
        let keys: Vec<f64> = order.iter().map(|&j| residuals[j]).collect();
        let mut s0 = vec![0.0; m + 1];
        let mut s1 = vec![0.0; m + 1];
        for pos in (0..m).rev() {
            let j = order[pos];
            s0[pos] = s0[pos + 1] + self.w[j];
            s1[pos] = s1[pos + 1] + self.w[j] * residuals[j];
        }
        let mut total = 0.0;
        for i in 0..n {
            if !self.is_event_term(i) {
                continue;
            }
            let e = residuals[i];
            // Ties contribute zero, so strict or inclusive start is equivalent.
            let k = keys.partition_point(|&v| v <= e);
            total += self.omega[i] * (s1[k] - e * s0[k]);
        }
        total / (n as f64 * s0[0])
    }
}

/// Ψ with Ω = W = Ŵ assigned by `plan` (estimated fractions when requested).
pub fn psi_star(cohort: &Cohort, plan: &WeightPlan, theta: &[f64], rho: RhoKind) -> Result<PsiValue> {
    let (wc, _) = WeightedCohort::from_plan(cohort, plan)?;
    wc.psi(theta, rho)
}

/// Free-function form of [`WeightedCohort::psi`].
pub fn psi(
    cohort: &Cohort,
    omega: &[f64],
    w: &[f64],
    theta: &[f64],
    rho: RhoKind,
) -> Result<PsiValue> {
    WeightedCohort::new(cohort, omega.to_vec(), w.to_vec())?.psi(theta, rho)
}

pub fn psi_pairwise_oracle(cohort: &Cohort, omega: &[f64], w: &[f64], theta: &[f64]) -> Result<Vec<f64>> {
    WeightedCohort::new(cohort, omega.to_vec(), w.to_vec())?.psi_pairwise_oracle(theta)
}

pub fn gehan_loss(cohort: &Cohort, omega: &[f64], w: &[f64], theta: &[f64]) -> Result<f64> {
    WeightedCohort::new(cohort, omega.to_vec(), w.to_vec())?.gehan_loss(theta)
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}
