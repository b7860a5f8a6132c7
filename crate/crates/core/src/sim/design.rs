use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::config::{ErrorDist, StudyConfig};
use crate::data::{Cohort, Subject};
use crate::error::{Error, Result};

/// Upper limit on b − a explored by the censoring calibration.
const MAX_WINDOW: f64 = 1000.0;

/// Support [a, b] of the uniform censoring law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensoringWindow {
    pub a: f64,
    pub b: f64,
}

/// Mean of the error survival function over [a, b], i.e. P(e > C) for
/// C ~ Uniform[a, b].
fn censoring_rate(dist: ErrorDist, a: f64, b: f64) -> f64 {
    let width = b - a;
    if width <= 0.0 {
        return dist.survival(a);
    }
    let panels = ((width * 64.0).ceil() as usize).clamp(64, 200_000) * 2;
    let h = width / panels as f64;
    let mut sum = dist.survival(a) + dist.survival(b);
    for k in 1..panels {
        let weight = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += weight * dist.survival(a + k as f64 * h);
    }
    sum * h / 3.0 / width
}

/// Finds the uniform censoring window giving censoring proportion `target`
/// when T = e, with a at the 1st percentile of the error law.
pub fn calibrate_censoring(dist: ErrorDist, target: f64) -> Result<CensoringWindow> {
    if !(target > 0.0 && target <= 0.99) {
        return Err(Error::InvalidArgument(format!(
            "target censoring {target} outside (0, 0.99]"
        )));
    }
    let a = dist.quantile(0.01);
    let at_a = dist.survival(a);
    if target >= at_a {
        return Ok(CensoringWindow { a, b: a });
    }
    let floor = censoring_rate(dist, a, a + MAX_WINDOW);
    if target < floor {
        return Err(Error::InvalidArgument(format!(
            "target censoring {target} unreachable; minimum over the search range is {floor:.3e}"
        )));
    }
    let (mut lo, mut hi) = (a, a + MAX_WINDOW);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if censoring_rate(dist, a, mid) > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-10 {
            break;
        }
    }
    Ok(CensoringWindow { a, b: 0.5 * (lo + hi) })
}

/// Equal-allocation stratified sampling probabilities (π for Z* = 0,
/// π for Z* = 1) with overall expected fraction `f`.
pub fn allocation_probs(cov_prob: f64, sensitivity: f64, specificity: f64, f: f64) -> Result<(f64, f64)> {
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "subcohort fraction {f} outside (0, 1]"
        )));
    }
    let p1 = sensitivity * cov_prob + (1.0 - specificity) * (1.0 - cov_prob);
    let p0 = 1.0 - p1;
    if f == 1.0 {
        return Ok((1.0, 1.0));
    }
    let (mut pi0, mut pi1) = (f / (2.0 * p0), f / (2.0 * p1));
    if pi1 > 1.0 {
        pi1 = 1.0;
        pi0 = (f - p1) / p0;
    } else if pi0 > 1.0 {
        pi0 = 1.0;
        pi1 = (f - p0) / p1;
    }
    Ok((pi0.min(1.0), pi1.min(1.0)))
}

/// Calibrated design constants shared by all replicates of a study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Design {
    pub window: CensoringWindow,
    pub pi: (f64, f64),
}

impl Design {
    pub fn new(config: &StudyConfig) -> Result<Self> {
        Self::with_fraction(config, config.subcohort_fraction)
    }

    pub fn with_fraction(config: &StudyConfig, fraction: f64) -> Result<Self> {
        config.validate()?;
        let window = calibrate_censoring(config.error_dist, config.target_censoring)?;
        let pi = allocation_probs(
            config.cov_prob,
            config.zstar_sensitivity,
            config.zstar_specificity,
            fraction,
        )?;
        Ok(Self { window, pi })
    }
}

fn sample_error<R: Rng>(dist: ErrorDist, rng: &mut R) -> f64 {
    match dist {
        ErrorDist::Normal => rng.sample(StandardNormal),
        ErrorDist::Logistic | ErrorDist::ExtremeValue => {
            let u: f64 = rng.random();
            dist.quantile(u.max(f64::MIN_POSITIVE))
        }
    }
}

/// Draws one cohort of `n` subjects on RNG stream `replicate_index` of
/// `master_seed`.
///
/// Every subject consumes the same sequence of draws whatever the sampling
/// probabilities, so cohorts generated under different fractions share
/// covariates, times and surrogates and differ only in subcohort membership.
pub fn generate_cohort(config: &StudyConfig, design: &Design, n: usize, replicate_index: u64) -> Result<Cohort> {
    if n < 2 {
        return Err(Error::InvalidArgument("cohort size must be at least 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.master_seed);
    rng.set_stream(replicate_index);
    let CensoringWindow { a, b } = design.window;
    let subjects = (0..n)
        .map(|_| {
            let z = f64::from(u8::from(rng.random_bool(config.cov_prob)));
            let e = sample_error(config.error_dist, &mut rng);
            let c = a + (b - a) * rng.random::<f64>();
            let p_star = if z == 1.0 {
                config.zstar_sensitivity
            } else {
                1.0 - config.zstar_specificity
            };
            let zstar = u32::from(rng.random_bool(p_star));
            let pi = if zstar == 1 { design.pi.1 } else { design.pi.0 };
            let in_subcohort = rng.random::<f64>() < pi;
            let t = config.theta0 * z + e;
            Subject::new(t.min(c), t <= c, vec![z])
                .with_stratum(zstar)
                .with_pi(pi)
                .with_subcohort(in_subcohort)
        })
        .collect();
    Cohort::new(subjects)
}
