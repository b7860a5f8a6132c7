//! Cohort and subject types, ingestion transforms and the regularity checks
//! run before fitting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weights::{assign_weights, WeightPlan};

/// Transformation applied to raw times at ingestion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformSpec {
    #[default]
    Identity,
    Log,
}

impl TransformSpec {
    pub fn apply(self, raw: f64) -> Result<f64> {
        if !raw.is_finite() {
            return Err(Error::NonFinite("raw time"));
        }
        match self {
            TransformSpec::Identity => Ok(raw),
            TransformSpec::Log if raw > 0.0 => Ok(raw.ln()),
            TransformSpec::Log => Err(Error::InvalidArgument(format!(
                "log transform requires positive times, got {raw}"
            ))),
        }
    }
}

impl std::str::FromStr for TransformSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TransformSpec::Identity),
            "log" => Ok(TransformSpec::Log),
            other => Err(Error::InvalidArgument(format!("unknown transform `{other}`"))),
        }
    }
}

/// Integer stratum label.
pub type StratumId = u32;

/// One observation on the transformed time scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub y: f64,
    pub delta: bool,
    /// Model covariates. Entries of unobserved subjects are never read.
    pub z: Vec<f64>,
    pub stratum: Option<StratumId>,
    /// Missingness indicator R: true when the full covariate vector is known.
    pub observed: bool,
    pub in_subcohort: bool,
    pub pi: Option<f64>,
}

impl Subject {
    /// A fully observed subject outside any sampling design.
    pub fn new(y: f64, delta: bool, z: Vec<f64>) -> Self {
        Self {
            y,
            delta,
            z,
            stratum: None,
            observed: true,
            in_subcohort: true,
            pi: None,
        }
    }

    pub fn with_stratum(mut self, stratum: StratumId) -> Self {
        self.stratum = Some(stratum);
        self
    }

    pub fn with_pi(mut self, pi: f64) -> Self {
        self.pi = Some(pi);
        self
    }

    pub fn with_subcohort(mut self, in_subcohort: bool) -> Self {
        self.in_subcohort = in_subcohort;
        self
    }

    pub fn with_observed(mut self, observed: bool) -> Self {
        self.observed = observed;
        self
    }
}

/// A cohort of subjects sharing covariate dimension `d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    subjects: Vec<Subject>,
    d: usize,
}

impl Cohort {
    /// Builds a cohort, checking the shared dimension, `n >= 2` and finiteness.
    /// The at-least-one-event requirement is a validation concern; see
    /// [`validate_cohort`].
    pub fn new(subjects: Vec<Subject>) -> Result<Self> {
        let d = subjects
            .first()
            .map(|s| s.z.len())
            .ok_or_else(|| Error::InvalidCohort("empty cohort".into()))?;
        if d == 0 {
            return Err(Error::InvalidCohort("covariate dimension is zero".into()));
        }
        if subjects.len() < 2 {
            return Err(Error::InvalidCohort("cohort needs at least two subjects".into()));
        }
        for (i, s) in subjects.iter().enumerate() {
            if s.z.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: s.z.len(),
                });
            }
            if !s.y.is_finite() {
                return Err(Error::InvalidCohort(format!("subject {i} has nonfinite time")));
            }
            if s.observed && s.z.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidCohort(format!(
                    "subject {i} is marked observed but has nonfinite covariates"
                )));
            }
        }
        Ok(Self { subjects, d })
    }

    #[cfg(test)]
    pub(crate) fn new_unchecked(subjects: Vec<Subject>, d: usize) -> Self {
        Self { subjects, d }
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn n_events(&self) -> usize {
        self.subjects.iter().filter(|s| s.delta).count()
    }
}

/// Bounds used by [`validate_cohort`] and by the risk-set engine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationPolicy {
    /// Smallest admissible selection probability.
    pub zeta: f64,
    /// Residual horizon. Kept for reporting; enforcement goes through
    /// `min_risk_weight`.
    pub tau: Option<f64>,
    /// Risk sets with normalized weight at or below this value count as empty.
    pub min_risk_weight: f64,
}

pub const DEFAULT_MIN_RISK_WEIGHT: f64 = 1e-12;

impl Default for ValidationPolicy {
    fn default() -> Self {
        Self {
            zeta: 1e-6,
            tau: None,
            min_risk_weight: DEFAULT_MIN_RISK_WEIGHT,
        }
    }
}

impl ValidationPolicy {
    pub fn new(zeta: f64, min_risk_weight: f64) -> Result<Self> {
        if !(zeta > 0.0) || !(min_risk_weight > 0.0) {
            return Err(Error::InvalidArgument(
                "zeta and min_risk_weight must be positive".into(),
            ));
        }
        Ok(Self {
            zeta,
            tau: None,
            min_risk_weight,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Violation {
    /// Selection probability below `zeta`.
    SelectionProbability { index: usize, pi: f64, zeta: f64 },
    NoEvents,
    /// Subject lacks covariates but the plan gives it weight.
    UnobservedWeighted { index: usize },
    /// The plan cannot be applied to this cohort at all.
    PlanNotApplicable(String),
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::SelectionProbability { index, pi, zeta } => write!(
                f,
                "subject {index}: selection probability {pi} below minimum {zeta}"
            ),
            Violation::NoEvents => write!(f, "no events"),
            Violation::UnobservedWeighted { index } => write!(
                f,
                "subject {index}: covariates unobserved but weight plan assigns nonzero weight"
            ),
            Violation::PlanNotApplicable(msg) => write!(f, "weight plan not applicable: {msg}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks selection-probability bounds, event presence and that every subject
/// the plan weights has covariates.
pub fn validate_cohort(
    cohort: &Cohort,
    plan: &WeightPlan,
    policy: &ValidationPolicy,
) -> ValidationReport {
    let mut violations = Vec::new();
    for (index, s) in cohort.subjects().iter().enumerate() {
        if let Some(pi) = s.pi {
            if !(pi >= policy.zeta) {
                violations.push(Violation::SelectionProbability {
                    index,
                    pi,
                    zeta: policy.zeta,
                });
            }
        }
    }
    if cohort.n_events() == 0 {
        violations.push(Violation::NoEvents);
    }
    match assign_weights(cohort, plan) {
        Ok(weights) => {
            for (index, s) in cohort.subjects().iter().enumerate() {
                let needed = weights.w[index] > 0.0 || (s.delta && weights.omega[index] > 0.0);
                if !s.observed && needed {
                    violations.push(Violation::UnobservedWeighted { index });
                }
            }
        }
        Err(e) => violations.push(Violation::PlanNotApplicable(e.to_string())),
    }
    ValidationReport { violations }
}
