use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Method, MethodSpec, StudyConfig};
use super::design::{generate_cohort, Design};
use super::efficiency::asymptotic_variance;
use crate::data::Cohort;
use crate::error::{Error, Result};
use crate::estimating::RhoKind;
use crate::fit::{fit_plan, FitConfig};
use crate::solver::SolverFlag;

/// Summary of one fit within a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub theta_hat: f64,
    /// Reported variance: corrected for estimated fractions when applicable.
    pub variance: f64,
    /// Variance with the sampling fractions treated as known.
    pub sigma0: f64,
    pub covers: bool,
    pub flags: Vec<SolverFlag>,
}

/// Fits one analysis of a simulated cohort and checks whether the nominal
/// 95% interval covers `theta0`.
pub fn run_replicate(
    cohort: &Cohort,
    method: Method,
    rho: RhoKind,
    theta0: f64,
    seed_theta: Option<f64>,
    step_scale: f64,
) -> Result<ReplicateOutcome> {
    let config = FitConfig {
        step_scale,
        ..FitConfig::new(rho)
    };
    let seed = seed_theta.map(|t| vec![t]);
    let summary = fit_plan(cohort, &method.plan(), &config, seed.as_deref())?;
    let theta_hat = summary.fit.theta_hat[0];
    let variance = summary.variance.variance()[(0, 0)];
    let sigma0 = summary.variance.sigma0[(0, 0)];
    if !theta_hat.is_finite() || !variance.is_finite() || !sigma0.is_finite() {
        return Err(Error::NonFinite("replicate estimate"));
    }
    let (lo, hi) = summary.intervals[0];
    Ok(ReplicateOutcome {
        theta_hat,
        variance,
        sigma0,
        covers: lo <= theta0 && theta0 <= hi,
        flags: summary.fit.flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub alpha_fraction: f64,
    pub weight: RhoKind,
    pub method: Method,
    pub bias: f64,
    pub emp_var: f64,
    pub ave_var: f64,
    /// Fraction of successful replicates whose interval covers θ₀.
    pub coverage: f64,
    pub asym_var: Option<f64>,
    /// Average variance with the sampling fractions treated as known.
    pub ave_sigma0: f64,
    pub replicates: usize,
    pub failures: usize,
    pub scaled_norm_exceeded: usize,
    pub flat_region: usize,
    pub degenerate: usize,
    pub nonunique: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub rows: Vec<ReportRow>,
}

impl StudyReport {
    pub fn row(&self, rho: RhoKind, method: Method) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.weight == rho && r.method == method)
    }

    /// Fixed-width text table, one line per row.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:>6} {:>8} {:>6} {:>8} {:>8} {:>8} {:>6} {:>9} {:>5}",
            "alpha", "weight", "method", "bias", "emp_var", "ave_var", "cp", "asym_var", "fail"
        );
        for r in &self.rows {
            let asym = r.asym_var.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
            let _ = writeln!(
                out,
                "{:>6.2} {:>8} {:>6} {:>8.4} {:>8.4} {:>8.4} {:>6.1} {:>9} {:>5}",
                r.alpha_fraction,
                r.weight.as_str(),
                r.method.number(),
                r.bias,
                r.emp_var,
                r.ave_var,
                100.0 * r.coverage,
                asym,
                r.failures
            );
        }
        out
    }
}

fn unique_specs(config: &StudyConfig) -> Vec<MethodSpec> {
    let mut specs = config.methods.clone();
    specs.sort();
    specs.dedup();
    specs
}

/// Runs every requested analysis on replicate `index`. Logrank fits start
/// from the Gehan estimate of the same method when that is available.
fn replicate_outcomes(
    config: &StudyConfig,
    design: &Design,
    specs: &[MethodSpec],
    index: u64,
) -> Vec<Option<ReplicateOutcome>> {
    let cohort = match generate_cohort(config, design, config.n, index) {
        Ok(c) => c,
        Err(_) => return vec![None; specs.len()],
    };
    let mut gehan: Vec<(Method, Option<ReplicateOutcome>)> = Vec::new();
    for spec in specs {
        if !gehan.iter().any(|(m, _)| *m == spec.method) {
            let out = run_replicate(&cohort, spec.method, RhoKind::Gehan, config.theta0, None, config.step_scale).ok();
            gehan.push((spec.method, out));
        }
    }
    specs
        .iter()
        .map(|spec| {
            let g = gehan.iter().find(|(m, _)| *m == spec.method).and_then(|(_, o)| o.clone());
            match spec.rho {
                RhoKind::Gehan => g,
                RhoKind::Logrank => run_replicate(
                    &cohort,
                    spec.method,
                    RhoKind::Logrank,
                    config.theta0,
                    g.map(|o| o.theta_hat),
                    config.step_scale,
                )
                .ok(),
            }
        })
        .collect()
}

fn aggregate(
    config: &StudyConfig,
    spec: MethodSpec,
    outcomes: &[&Option<ReplicateOutcome>],
    asym_var: Option<f64>,
) -> ReportRow {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref()).collect();
    let r = ok.len();
    let count = |flag| ok.iter().filter(|o| o.flags.contains(&flag)).count();
    let (mut bias, mut emp_var, mut ave_var, mut ave_sigma0, mut coverage) =
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
    if r > 0 {
        let rf = r as f64;
        let mean = ok.iter().map(|o| o.theta_hat).sum::<f64>() / rf;
        bias = mean - config.theta0;
        emp_var = if r > 1 {
            ok.iter().map(|o| (o.theta_hat - mean).powi(2)).sum::<f64>() / (rf - 1.0)
        } else {
            0.0
        };
        ave_var = ok.iter().map(|o| o.variance).sum::<f64>() / rf;
        ave_sigma0 = ok.iter().map(|o| o.sigma0).sum::<f64>() / rf;
        coverage = ok.iter().filter(|o| o.covers).count() as f64 / rf;
    }
    ReportRow {
        alpha_fraction: config.subcohort_fraction,
        weight: spec.rho,
        method: spec.method,
        bias,
        emp_var,
        ave_var,
        coverage,
        asym_var,
        ave_sigma0,
        replicates: r,
        failures: outcomes.len() - r,
        scaled_norm_exceeded: count(SolverFlag::ScaledNormExceeded),
        flat_region: count(SolverFlag::FlatRegion),
        degenerate: count(SolverFlag::Degenerate),
        nonunique: count(SolverFlag::NonUnique),
    }
}

/// Runs the Monte Carlo study on the current rayon pool.
pub fn run_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let design = Design::new(config)?;
    let specs = unique_specs(config);
    let per_replicate: Vec<Vec<Option<ReplicateOutcome>>> = (0..config.replications as u64)
        .into_par_iter()
        .map(|index| replicate_outcomes(config, &design, &specs, index))
        .collect();
    let asym: Vec<Option<f64>> = if config.asymptotic_n > 0 {
        specs
            .par_iter()
            .map(|&spec| asymptotic_variance(config, config.subcohort_fraction, spec).ok())
            .collect()
    } else {
        vec![None; specs.len()]
    };
    let rows = specs
        .iter()
        .enumerate()
        .map(|(k, &spec)| {
            let column: Vec<&Option<ReplicateOutcome>> = per_replicate.iter().map(|rep| &rep[k]).collect();
            aggregate(config, spec, &column, asym[k])
        })
        .collect();
    Ok(StudyReport { rows })
}

/// Runs the study on a dedicated pool of `threads` workers. The report does
/// not depend on the worker count.
pub fn run_study_with_threads(config: &StudyConfig, threads: usize) -> Result<StudyReport> {
    thread_pool(threads)?.install(|| run_study(config))
}

pub(crate) fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}
