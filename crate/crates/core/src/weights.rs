//! Subject-specific weight pairs (Ω, W) for full-cohort, case-cohort and
//! missing-at-random designs, with stratified sampling-fraction estimates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Cohort, StratumId, Subject};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Ω = W = 1.
    FullData,
    /// Ω = 1, W = 1(SC)/π.
    CaseCohortPredictable,
    /// Ω = W = Δ + (1 − Δ)·1(SC)/π.
    CaseCohortNonpredictable,
    /// Ω = W = R/π.
    MarInverseProb,
}

impl Scheme {
    fn uses_selection(self) -> bool {
        !matches!(self, Scheme::FullData)
    }

    fn selected(self, s: &Subject) -> bool {
        match self {
            Scheme::MarInverseProb => s.observed,
            _ => s.in_subcohort,
        }
    }

    /// Whether the subject belongs to the pool over which sampling fractions
    /// are computed.
    fn in_pool(self, s: &Subject) -> bool {
        match self {
            Scheme::CaseCohortNonpredictable => !s.delta,
            _ => true,
        }
    }

    /// Whether Ω depends on the selection probabilities.
    fn omega_is_weighted(self) -> bool {
        matches!(
            self,
            Scheme::CaseCohortNonpredictable | Scheme::MarInverseProb
        )
    }
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FullData => "full_data",
            Scheme::CaseCohortPredictable => "case_cohort_predictable",
            Scheme::CaseCohortNonpredictable => "case_cohort_nonpredictable",
            Scheme::MarInverseProb => "mar_inverse_prob",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Scheme::FullData,
            Scheme::CaseCohortPredictable,
            Scheme::CaseCohortNonpredictable,
            Scheme::MarInverseProb,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaSource {
    #[default]
    TruePi,
    EstimatedFractions,
}

impl std::str::FromStr for AlphaSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "true_pi" => Ok(AlphaSource::TruePi),
            "estimated_fractions" => Ok(AlphaSource::EstimatedFractions),
            other => Err(Error::InvalidArgument(format!("unknown alpha source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightPlan {
    pub scheme: Scheme,
    pub alpha_source: AlphaSource,
    /// Ordered stratum labels; only read for estimated fractions.
    pub strata: Vec<StratumId>,
}

impl WeightPlan {
    pub fn new(scheme: Scheme, alpha_source: AlphaSource) -> Self {
        Self {
            scheme,
            alpha_source,
            strata: Vec::new(),
        }
    }

    pub fn full_data() -> Self {
        Self::new(Scheme::FullData, AlphaSource::TruePi)
    }

    pub fn with_strata(mut self, strata: Vec<StratumId>) -> Self {
        self.strata = strata;
        self
    }

    /// Fills `strata` with the sorted distinct labels found in the cohort.
    pub fn with_strata_from(mut self, cohort: &Cohort) -> Self {
        let mut labels: Vec<StratumId> = cohort.subjects().iter().filter_map(|s| s.stratum).collect();
        labels.sort_unstable();
        labels.dedup();
        self.strata = labels;
        self
    }

    pub fn is_estimated(&self) -> bool {
        self.scheme.uses_selection() && self.alpha_source == AlphaSource::EstimatedFractions
    }
}

/// Realized per-stratum sampling fractions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub strata: Vec<StratumId>,
    /// n_s* / n_s.
    pub alpha_hat: Vec<f64>,
    /// n_s / n with n the cohort size.
    pub gamma_hat: Vec<f64>,
    /// (n_s*, n_s).
    pub counts: Vec<(usize, usize)>,
}

impl AlphaEstimate {
    pub fn position(&self, stratum: StratumId) -> Result<usize> {
        self.strata
            .iter()
            .position(|&s| s == stratum)
            .ok_or(Error::UnknownStratum { stratum })
    }

    pub fn n_strata(&self) -> usize {
        self.strata.len()
    }
}

/// Weight arrays produced by [`assign_weights`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub omega: Vec<f64>,
    pub w: Vec<f64>,
    /// Present when sampling fractions were estimated.
    pub alpha: Option<AlphaEstimate>,
}

pub fn estimate_alpha(cohort: &Cohort, plan: &WeightPlan) -> Result<AlphaEstimate> {
    if !plan.scheme.uses_selection() {
        return Err(Error::InvalidArgument(
            "full-data plans have no sampling fractions".into(),
        ));
    }
    if plan.strata.is_empty() {
        return Err(Error::InvalidArgument("no strata supplied".into()));
    }
    let s_count = plan.strata.len();
    let mut sampled = vec![0usize; s_count];
    let mut sizes = vec![0usize; s_count];
    for (index, s) in cohort.subjects().iter().enumerate() {
        if !plan.scheme.in_pool(s) {
            continue;
        }
        let label = s.stratum.ok_or(Error::MissingField {
            index,
            field: "stratum",
        })?;
        let k = plan
            .strata
            .iter()
            .position(|&l| l == label)
            .ok_or(Error::UnknownStratum { stratum: label })?;
        sizes[k] += 1;
        if plan.scheme.selected(s) {
            sampled[k] += 1;
        }
    }
    let n = cohort.len() as f64;
    let mut alpha_hat = Vec::with_capacity(s_count);
    for (k, (&ns, &nstar)) in sizes.iter().zip(&sampled).enumerate() {
        if ns == 0 {
            return Err(Error::EmptyStratum {
                stratum: plan.strata[k],
            });
        }
        if nstar == 0 {
            return Err(Error::UnsampledStratum {
                stratum: plan.strata[k],
            });
        }
        alpha_hat.push(nstar as f64 / ns as f64);
    }
    Ok(AlphaEstimate {
        strata: plan.strata.clone(),
        alpha_hat,
        gamma_hat: sizes.iter().map(|&ns| ns as f64 / n).collect(),
        counts: sampled.into_iter().zip(sizes).collect(),
    })
}

pub fn pi_from_alpha(subject: &Subject, estimate: &AlphaEstimate) -> Result<f64> {
    let stratum = subject
        .stratum
        .ok_or(Error::InvalidArgument("subject has no stratum".into()))?;
    Ok(estimate.alpha_hat[estimate.position(stratum)?])
}

fn selection_prob(
    index: usize,
    s: &Subject,
    estimate: Option<&AlphaEstimate>,
) -> Result<f64> {
    let pi = match estimate {
        Some(est) => {
            let stratum = s.stratum.ok_or(Error::MissingField {
                index,
                field: "stratum",
            })?;
            est.alpha_hat[est.position(stratum)?]
        }
        None => s.pi.ok_or(Error::MissingField { index, field: "pi" })?,
    };
    if !(pi > 0.0 && pi <= 1.0) {
        return Err(Error::InvalidProbability { index, value: pi });
    }
    Ok(pi)
}

pub fn assign_weights(cohort: &Cohort, plan: &WeightPlan) -> Result<Weights> {
    let alpha = if plan.is_estimated() {
        Some(estimate_alpha(cohort, plan)?)
    } else {
        None
    };
    let n = cohort.len();
    let mut omega = Vec::with_capacity(n);
    let mut w = Vec::with_capacity(n);
    for (index, s) in cohort.subjects().iter().enumerate() {
        let (o, wi) = match plan.scheme {
            Scheme::FullData => (1.0, 1.0),
            Scheme::CaseCohortPredictable => {
                let wi = if s.in_subcohort {
                    1.0 / selection_prob(index, s, alpha.as_ref())?
                } else {
                    0.0
                };
                (1.0, wi)
            }
            Scheme::CaseCohortNonpredictable => {
                let wi = if s.delta {
                    1.0
                } else if s.in_subcohort {
                    1.0 / selection_prob(index, s, alpha.as_ref())?
                } else {
                    0.0
                };
                (wi, wi)
            }
            Scheme::MarInverseProb => {
                let wi = if s.observed {
                    1.0 / selection_prob(index, s, alpha.as_ref())?
                } else {
                    0.0
                };
                (wi, wi)
            }
        };
        omega.push(o);
        w.push(wi);
    }
    Ok(Weights { omega, w, alpha })
}

/// α-derivative of W(X; α) for one subject, one component per stratum.
pub fn w_alpha_derivative(
    subject: &Subject,
    scheme: Scheme,
    estimate: &AlphaEstimate,
) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; estimate.n_strata()];
    let contributes = match scheme {
        Scheme::FullData => false,
        Scheme::CaseCohortPredictable => subject.in_subcohort,
        Scheme::CaseCohortNonpredictable => !subject.delta && subject.in_subcohort,
        Scheme::MarInverseProb => subject.observed,
    };
    if !contributes {
        return Ok(grad);
    }
    let stratum = subject
        .stratum
        .ok_or(Error::InvalidArgument("subject has no stratum".into()))?;
    let k = estimate.position(stratum)?;
    let a = estimate.alpha_hat[k];
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sampling fraction of stratum {stratum} is zero"
        )));
    }
    grad[k] = -1.0 / (a * a);
    Ok(grad)
}

/// α-derivative of Ω(X; α); zero for schemes whose Ω is fixed at 1.
pub fn omega_alpha_derivative(
    subject: &Subject,
    scheme: Scheme,
    estimate: &AlphaEstimate,
) -> Result<Vec<f64>> {
    if scheme.omega_is_weighted() {
        w_alpha_derivative(subject, scheme, estimate)
    } else {
        Ok(vec![0.0; estimate.n_strata()])
    }
}

/// diag{α̂_s(1 − α̂_s)/γ̂_s}, the asymptotic variance of √n(α̂ − α).
pub fn v0_hat(estimate: &AlphaEstimate) -> Result<DMatrix<f64>> {
    let s = estimate.n_strata();
    let mut v = DMatrix::zeros(s, s);
    for k in 0..s {
        let g = estimate.gamma_hat[k];
        if !(g > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "stratum {} has zero size fraction",
                estimate.strata[k]
            )));
        }
        let a = estimate.alpha_hat[k];
        v[(k, k)] = a * (1.0 - a) / g;
    }
    Ok(v)
}
