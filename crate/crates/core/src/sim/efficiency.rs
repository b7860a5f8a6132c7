use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, MethodSpec, StudyConfig};
use super::design::{generate_cohort, Design};
use super::study::thread_pool;
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::estimating::{RhoKind, WeightedCohort};
use crate::fit::estimate_variance;

/// RNG stream reserved for the large cohort behind asymptotic variances.
const ASYMPTOTIC_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub fraction: f64,
    pub weight: RhoKind,
    pub method: Method,
    /// Plug-in variance of θ̂ scaled to a cohort of `config.n`.
    pub asym_var: f64,
    /// Variance of the full-cohort logrank estimator divided by `asym_var`.
    pub rel_efficiency: f64,
}

fn large_cohort(config: &StudyConfig, fraction: f64) -> Result<Cohort> {
    if config.asymptotic_n < 10 {
        return Err(Error::InvalidArgument(
            "`asymptotic_n` must be at least 10 for asymptotic variances".into(),
        ));
    }
    let design = Design::with_fraction(config, fraction)?;
    generate_cohort(config, &design, config.asymptotic_n, ASYMPTOTIC_STREAM)
}

fn plug_in(config: &StudyConfig, cohort: &Cohort, spec: MethodSpec) -> Result<f64> {
    let plan = spec.method.plan();
    let (wc, alpha) = WeightedCohort::from_plan(cohort, &plan)?;
    let theta = vec![config.theta0];
    let (report, _) = estimate_variance(&wc, &theta, spec.rho, &plan, alpha.as_ref(), config.step_scale)?;
    let v = report.variance()[(0, 0)] * config.asymptotic_n as f64 / config.n as f64;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(Error::NonFinite("asymptotic variance"))
    }
}

/// Sandwich plug-in variance at θ₀ on a cohort of `config.asymptotic_n`
/// subjects, expressed for a cohort of `config.n`.
pub fn asymptotic_variance(config: &StudyConfig, fraction: f64, spec: MethodSpec) -> Result<f64> {
    let cohort = large_cohort(config, fraction)?;
    plug_in(config, &cohort, spec)
}

/// Relative efficiencies against the full-cohort logrank estimator for
/// every fraction in `grid` and every method in `config.methods`.
pub fn efficiency_curve(config: &StudyConfig, grid: &[f64]) -> Result<Vec<EfficiencyRow>> {
    config.validate()?;
    if grid.is_empty() {
        return Err(Error::InvalidArgument("fraction grid is empty".into()));
    }
    if let Some(&bad) = grid.iter().find(|&&f| !(f > 0.0 && f <= 1.0)) {
        return Err(Error::InvalidArgument(format!("fraction {bad} outside (0, 1]")));
    }
    let mut specs = config.methods.clone();
    specs.sort();
    specs.dedup();
    let reference = MethodSpec::new(RhoKind::Logrank, Method::Full);
    let blocks: Vec<Result<Vec<EfficiencyRow>>> = grid
        .par_iter()
        .map(|&fraction| {
            let cohort = large_cohort(config, fraction)?;
            let ref_var = plug_in(config, &cohort, reference)?;
            specs
                .iter()
                .map(|&spec| {
                    let asym_var = if spec == reference {
                        ref_var
                    } else {
                        plug_in(config, &cohort, spec)?
                    };
                    Ok(EfficiencyRow {
                        fraction,
                        weight: spec.rho,
                        method: spec.method,
                        asym_var,
                        rel_efficiency: ref_var / asym_var,
                    })
                })
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for block in blocks {
        rows.extend(block?);
    }
    Ok(rows)
}

/// [`efficiency_curve`] on a dedicated pool of `threads` workers.
pub fn efficiency_curve_with_threads(config: &StudyConfig, grid: &[f64], threads: usize) -> Result<Vec<EfficiencyRow>> {
    thread_pool(threads)?.install(|| efficiency_curve(config, grid))
}
