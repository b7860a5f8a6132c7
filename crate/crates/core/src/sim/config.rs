use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimating::RhoKind;
use crate::weights::{AlphaSource, Scheme, WeightPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    Normal,
    Logistic,
    /// Minimum-type Gumbel law with density exp(t − eᵗ).
    ExtremeValue,
}

impl ErrorDist {
    pub fn quantile(self, p: f64) -> f64 {
        match self {
            ErrorDist::Normal => crate::variance::normal_quantile(p),
            ErrorDist::Logistic => (p / (1.0 - p)).ln(),
            ErrorDist::ExtremeValue => (-(-p).ln_1p()).ln(),
        }
    }

    pub fn survival(self, t: f64) -> f64 {
        match self {
            ErrorDist::Normal => 0.5 * statrs::function::erf::erfc(t / std::f64::consts::SQRT_2),
            ErrorDist::Logistic => {
                if t > 0.0 {
                    let e = (-t).exp();
                    e / (1.0 + e)
                } else {
                    1.0 / (1.0 + t.exp())
                }
            }
            ErrorDist::ExtremeValue => (-t.exp()).exp(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorDist::Normal => "normal",
            ErrorDist::Logistic => "logistic",
            ErrorDist::ExtremeValue => "extreme_value",
        }
    }
}

impl std::str::FromStr for ErrorDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(ErrorDist::Normal),
            "logistic" => Ok(ErrorDist::Logistic),
            "extreme_value" => Ok(ErrorDist::ExtremeValue),
            other => Err(Error::InvalidArgument(format!("unknown error_dist `{other}`"))),
        }
    }
}

/// The five analyses of a case-cohort study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Full,
    PredTrue,
    PredEst,
    NonpredTrue,
    NonpredEst,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Full,
        Method::PredTrue,
        Method::PredEst,
        Method::NonpredTrue,
        Method::NonpredEst,
    ];

    /// Method number 1–5 in the conventional table order.
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(k: u8) -> Option<Self> {
        Self::ALL.get(usize::from(k).checked_sub(1)?).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::PredTrue => "pred_true",
            Method::PredEst => "pred_est",
            Method::NonpredTrue => "nonpred_true",
            Method::NonpredEst => "nonpred_est",
        }
    }

    /// Weight plan over strata {0, 1} of the surrogate Z*.
    pub fn plan(self) -> WeightPlan {
        let (scheme, source) = match self {
            Method::Full => (Scheme::FullData, AlphaSource::TruePi),
            Method::PredTrue => (Scheme::CaseCohortPredictable, AlphaSource::TruePi),
            Method::PredEst => (Scheme::CaseCohortPredictable, AlphaSource::EstimatedFractions),
            Method::NonpredTrue => (Scheme::CaseCohortNonpredictable, AlphaSource::TruePi),
            Method::NonpredEst => (Scheme::CaseCohortNonpredictable, AlphaSource::EstimatedFractions),
        };
        WeightPlan::new(scheme, source).with_strata(vec![0, 1])
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown method `{s}`")))
    }
}

/// One (weight function, method) combination, written `weight:method`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub rho: RhoKind,
    pub method: Method,
}

impl MethodSpec {
    pub fn new(rho: RhoKind, method: Method) -> Self {
        Self { rho, method }
    }

    /// All ten (weight function, method) combinations.
    pub fn all() -> Vec<MethodSpec> {
        [RhoKind::Logrank, RhoKind::Gehan]
            .iter()
            .flat_map(|&r| Method::ALL.iter().map(move |&m| MethodSpec::new(r, m)))
            .collect()
    }

    /// Parses `method` (both weight functions) or `weight:method`.
    pub fn parse_list(entry: &str) -> Result<Vec<MethodSpec>> {
        match entry.split_once(':') {
            Some((rho, method)) => Ok(vec![MethodSpec::new(rho.parse()?, method.parse()?)]),
            None => {
                let m: Method = entry.parse()?;
                Ok(vec![
                    MethodSpec::new(RhoKind::Logrank, m),
                    MethodSpec::new(RhoKind::Gehan, m),
                ])
            }
        }
    }

    pub fn label(&self) -> String {
        format!("{}:{}", self.rho, self.method.as_str())
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        match s.split_once(':') {
            Some((rho, method)) => Ok(MethodSpec::new(rho.parse()?, method.parse()?)),
            None => Err(Error::InvalidArgument(format!(
                "method `{s}` must be written weight:method"
            ))),
        }
    }
}

impl From<MethodSpec> for String {
    fn from(spec: MethodSpec) -> Self {
        spec.label()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub error_dist: ErrorDist,
    pub n: usize,
    pub theta0: f64,
    pub cov_prob: f64,
    pub zstar_sensitivity: f64,
    pub zstar_specificity: f64,
    pub target_censoring: f64,
    pub subcohort_fraction: f64,
    pub replications: usize,
    pub master_seed: u64,
    pub methods: Vec<MethodSpec>,
    /// Cohort size used for the plug-in asymptotic variance column; zero
    /// disables it.
    pub asymptotic_n: usize,
    /// Multiplier of the finite-difference step used for the slope matrix.
    pub step_scale: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            error_dist: ErrorDist::Logistic,
            n: 2000,
            theta0: 0.0,
            cov_prob: 0.3,
            zstar_sensitivity: 0.8,
            zstar_specificity: 0.8,
            target_censoring: 0.8,
            subcohort_fraction: 0.15,
            replications: 500,
            master_seed: 20090901,
            methods: MethodSpec::all(),
            asymptotic_n: 200_000,
            step_scale: 1.0,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        let open_unit = |name: &str, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("`{name}` must lie in (0, 1), got {v}")))
            }
        };
        open_unit("cov_prob", self.cov_prob)?;
        open_unit("zstar_sensitivity", self.zstar_sensitivity)?;
        open_unit("zstar_specificity", self.zstar_specificity)?;
        open_unit("target_censoring", self.target_censoring)?;
        if !(self.subcohort_fraction > 0.0 && self.subcohort_fraction <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "`subcohort_fraction` must lie in (0, 1], got {}",
                self.subcohort_fraction
            )));
        }
        if self.n < 10 {
            return Err(Error::InvalidArgument("`n` must be at least 10".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidArgument("`replications` must be at least 1".into()));
        }
        if !self.theta0.is_finite() {
            return Err(Error::InvalidArgument("`theta0` must be finite".into()));
        }
        if !(self.step_scale > 0.0 && self.step_scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "`step_scale` must be positive, got {}",
                self.step_scale
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("`methods` is empty".into()));
        }
        Ok(())
    }
}
