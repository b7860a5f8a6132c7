//! End-to-end fit: weights from a plan, root finding, variance and intervals.

use serde::{Deserialize, Serialize};

use crate::data::Cohort;
use crate::error::Result;
use crate::estimating::{RhoKind, WeightedCohort};
use crate::solver::{solve_gehan, solve_logrank, FitResult, SolveOptions};
use crate::variance::{
    confidence_interval, correction_matrix_b, corrected_variance, cum_hazard_hat,
    influence_contributions, sandwich_variance, slope_matrix, VarianceReport,
};
use crate::weights::{v0_hat, AlphaEstimate, WeightPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub rho: RhoKind,
    pub options: SolveOptions,
    pub level: f64,
    /// Finite-difference step multiplier for the slope matrix.
    pub step_scale: f64,
}

impl FitConfig {
    pub fn new(rho: RhoKind) -> Self {
        Self {
            rho,
            options: SolveOptions::default(),
            level: 0.95,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub plan: WeightPlan,
    pub alpha: Option<AlphaEstimate>,
    pub fit: FitResult,
    pub variance: VarianceReport,
    pub standard_errors: Vec<f64>,
    pub intervals: Vec<(f64, f64)>,
    pub slope_plateau: bool,
}

/// Variance of θ̂ at `theta`, corrected for estimated fractions when `alpha`
/// is given. Returns the report and the slope plateau warning.
pub fn estimate_variance(
    wc: &WeightedCohort<'_>,
    theta: &[f64],
    rho: RhoKind,
    plan: &WeightPlan,
    alpha: Option<&AlphaEstimate>,
    step_scale: f64,
) -> Result<(VarianceReport, bool)> {
    let hazard = cum_hazard_hat(wc, theta)?;
    let influence = influence_contributions(wc, theta, rho, &hazard)?;
    let slope = slope_matrix(wc, theta, rho, step_scale)?;
    let mut report = sandwich_variance(&influence.contributions, &slope.matrix)?;
    if let Some(alpha) = alpha {
        let b = correction_matrix_b(wc, theta, rho, plan.scheme, alpha)?;
        report = corrected_variance(report, b, v0_hat(alpha)?)?;
    }
    Ok((report, slope.plateau_warning))
}

/// Fits `cohort` under `plan`. Logrank fits start from `seed_theta` or, when
/// absent, from the Gehan solution.
pub fn fit_plan(
    cohort: &Cohort,
    plan: &WeightPlan,
    config: &FitConfig,
    seed_theta: Option<&[f64]>,
) -> Result<FitSummary> {
    let (wc, alpha) = WeightedCohort::from_plan(cohort, plan)?;
    let fit = match config.rho {
        RhoKind::Gehan => solve_gehan(&wc, &config.options)?,
        RhoKind::Logrank => solve_logrank(&wc, &config.options, seed_theta)?,
    };
    let (variance, slope_plateau) = estimate_variance(
        &wc,
        &fit.theta_hat,
        config.rho,
        plan,
        alpha.as_ref(),
        config.step_scale,
    )?;
    let intervals = confidence_interval(&fit.theta_hat, &variance, config.level)?;
    Ok(FitSummary {
        plan: plan.clone(),
        alpha,
        standard_errors: variance.standard_errors(),
        fit,
        variance,
        intervals,
        slope_plateau,
    })
}
